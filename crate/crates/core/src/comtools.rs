//! Communication tools available to planned sub-tasks: AWGN channel, BLEU
//! scorer, parameter counter, text similarity and a sandboxed file tool.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::knowledge::{cosine_unchecked, Embedder};
use crate::mcp::{ToolError, ToolInputs, ToolRegistry, ToolSpec};
use crate::sc_case::SCModelSpec;

#[derive(Debug, Error)]
pub enum ComtoolsError {
    #[error("signal has no samples")]
    EmptySignal,
    #[error("signal has zero power")]
    ZeroPowerSignal,
    #[error("candidate/reference count mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("max_n must be at least 1")]
    InvalidMaxN,
    #[error("path {0} escapes the sandbox")]
    SandboxEscape(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    /// Mean squared amplitude; 0 for an empty signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub seed: u64,
}

/// Standard normal samples by Box–Muller over a ChaCha8 stream.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Noise variance for a signal of the given power at `snr_db`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    power * 10f64.powf(-snr_db / 10.0)
}

/// Add white Gaussian noise at the requested SNR, measured against the
/// signal's own mean power.
pub fn awgn_transmit(x: &Signal, cfg: &ChannelConfig) -> Result<Signal, ComtoolsError> {
    if x.samples.is_empty() {
        return Err(ComtoolsError::EmptySignal);
    }
    let power = x.power();
    if power <= 0.0 {
        return Err(ComtoolsError::ZeroPowerSignal);
    }
    let sigma = noise_variance(power, cfg.snr_db).sqrt();
    let mut gauss = GaussianSource::new(cfg.seed);
    Ok(Signal::new(x.samples.iter().map(|s| s + sigma * gauss.next_standard()).collect()))
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Lowercase, split on whitespace, and emit every punctuation character as
/// its own token.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_punctuation() && c != '\'' {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    tokens
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with clipped n-gram precision and brevity penalty; no
/// smoothing, so any zero precision gives 0.
pub fn bleu_score<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
) -> Result<f64, ComtoolsError> {
    if candidates.len() != references.len() {
        return Err(ComtoolsError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(ComtoolsError::EmptyCorpus);
    }
    if max_n == 0 {
        return Err(ComtoolsError::InvalidMaxN);
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        c += cand.len();
        r += reference.len();
        for n in 1..=max_n {
            let cand_counts = ngram_counts(cand, n);
            let ref_counts = ngram_counts(reference, n);
            matches[n - 1] += cand_counts
                .iter()
                .map(|(g, &k)| k.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += cand_counts.values().sum::<usize>();
        }
    }
    if matches.contains(&0) {
        return Ok(0.0);
    }
    let log_mean = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * log_mean.exp())
}

// ---------------------------------------------------------------------------
// Parameters and similarity
// ---------------------------------------------------------------------------

/// Codebook entries plus one bias per embedding dimension.
pub fn count_params(spec: &SCModelSpec) -> u64 {
    spec.vocab_size as u64 * spec.embed_dim as u64 + spec.embed_dim as u64
}

pub fn semantic_similarity(a: &str, b: &str) -> f64 {
    let e = Embedder::default();
    cosine_unchecked(&e.embed(a), &e.embed(b))
}

// ---------------------------------------------------------------------------
// Sandboxed file tool
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsOp {
    Read,
    Write,
    List,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FsOutput {
    Text(String),
    Listing(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct FsTool {
    root: PathBuf,
}

impl FsTool {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Lexically resolve `path` under the root.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, ComtoolsError> {
        let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
        for comp in Path::new(path).components() {
            match comp {
                Component::Normal(p) => parts.push(p),
                Component::CurDir => {}
                Component::ParentDir => {
                    if parts.pop().is_none() {
                        return Err(ComtoolsError::SandboxEscape(path.to_string()));
                    }
                }
                Component::RootDir | Component::Prefix(_) => {
                    return Err(ComtoolsError::SandboxEscape(path.to_string()))
                }
            }
        }
        Ok(parts.iter().fold(self.root.clone(), |acc, p| acc.join(p)))
    }

    pub fn run(&self, op: FsOp, path: &str, payload: Option<&str>) -> Result<FsOutput, ComtoolsError> {
        let target = self.resolve(path)?;
        match op {
            FsOp::Read => Ok(FsOutput::Text(std::fs::read_to_string(target)?)),
            FsOp::Write => {
                let parent = target.parent().unwrap_or(&self.root).to_path_buf();
                std::fs::create_dir_all(&parent)?;
                let mut tmp = tempfile::NamedTempFile::new_in(&parent)?;
                tmp.write_all(payload.unwrap_or("").as_bytes())?;
                tmp.flush()?;
                tmp.persist(&target).map_err(|e| ComtoolsError::Io(e.error))?;
                Ok(FsOutput::Text(String::new()))
            }
            FsOp::List => {
                let mut names = Vec::new();
                for entry in std::fs::read_dir(target)? {
                    let entry = entry?;
                    let mut name = entry.file_name().to_string_lossy().into_owned();
                    if entry.file_type()?.is_dir() {
                        name.push('/');
                    }
                    names.push(name);
                }
                names.sort();
                Ok(FsOutput::Listing(names))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Registry adapters
// ---------------------------------------------------------------------------

fn schema(pairs: &[(&str, &str)]) -> std::collections::BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn input<'a>(inputs: &'a ToolInputs, key: &str) -> Result<&'a Value, ToolError> {
    inputs.get(key).ok_or_else(|| ToolError(format!("missing input '{key}'")))
}

fn input_f64(inputs: &ToolInputs, key: &str) -> Result<f64, ToolError> {
    input(inputs, key)?
        .as_f64()
        .ok_or_else(|| ToolError(format!("input '{key}' must be a number")))
}

fn input_str<'a>(inputs: &'a ToolInputs, key: &str) -> Result<&'a str, ToolError> {
    input(inputs, key)?
        .as_str()
        .ok_or_else(|| ToolError(format!("input '{key}' must be a string")))
}

/// Accepts either token arrays or sentences (tokenized with [`bleu_tokenize`]).
fn token_corpus(value: &Value, key: &str) -> Result<Vec<Vec<String>>, ToolError> {
    let items = value
        .as_array()
        .ok_or_else(|| ToolError(format!("input '{key}' must be an array")))?;
    items
        .iter()
        .map(|item| match item {
            Value::String(s) => Ok(bleu_tokenize(s)),
            Value::Array(toks) => toks
                .iter()
                .map(|t| t.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ToolError(format!("input '{key}' tokens must be strings"))),
            _ => Err(ToolError(format!("input '{key}' entries must be strings or token arrays"))),
        })
        .collect()
}

/// Register `awgn`, `bleu`, `params`, `simtext`, and `fs` when a sandbox
/// root is given.
pub fn register_comtools(registry: &mut ToolRegistry, sandbox: Option<FsTool>) -> Result<(), crate::mcp::McpError> {
    registry.register(
        ToolSpec::new("awgn", "additive white Gaussian noise channel", true)
            .with_schema(schema(&[("samples", "real[]"), ("snr_db", "real"), ("seed", "int")])),
        |inputs: &ToolInputs| {
            let samples: Vec<f64> = serde_json::from_value(input(inputs, "samples")?.clone())
                .map_err(|e| ToolError(format!("samples: {e}")))?;
            let cfg = ChannelConfig {
                snr_db: input_f64(inputs, "snr_db")?,
                seed: input(inputs, "seed")?.as_u64().ok_or_else(|| ToolError("seed must be a non-negative integer".into()))?,
            };
            let y = awgn_transmit(&Signal::new(samples), &cfg).map_err(|e| ToolError(e.to_string()))?;
            Ok(json!(y.samples))
        },
    )?;
    registry.register(
        ToolSpec::new("bleu", "corpus-level BLEU score", true).with_schema(schema(&[
            ("candidates", "token[][]"),
            ("references", "token[][]"),
            ("max_n", "int"),
        ])),
        |inputs: &ToolInputs| {
            let cands = token_corpus(input(inputs, "candidates")?, "candidates")?;
            let refs = token_corpus(input(inputs, "references")?, "references")?;
            let max_n = inputs.get("max_n").and_then(Value::as_u64).unwrap_or(4) as usize;
            let score = bleu_score(&cands, &refs, max_n).map_err(|e| ToolError(e.to_string()))?;
            Ok(json!(score))
        },
    )?;
    registry.register(
        ToolSpec::new("params", "parameter count of a semantic codec spec", true)
            .with_schema(schema(&[("spec", "SCModelSpec")])),
        |inputs: &ToolInputs| {
            let spec: SCModelSpec = serde_json::from_value(input(inputs, "spec")?.clone())
                .map_err(|e| ToolError(format!("spec: {e}")))?;
            Ok(json!(count_params(&spec)))
        },
    )?;
    registry.register(
        ToolSpec::new("simtext", "cosine similarity of two texts", true)
            .with_schema(schema(&[("a", "text"), ("b", "text")])),
        |inputs: &ToolInputs| Ok(json!(semantic_similarity(input_str(inputs, "a")?, input_str(inputs, "b")?))),
    )?;
    if let Some(fs) = sandbox {
        registry.register(
            ToolSpec::new("fs", "sandboxed file read/write/list", false)
                .with_schema(schema(&[("op", "text"), ("path", "text"), ("payload", "text")])),
            move |inputs: &ToolInputs| {
                let op: FsOp = serde_json::from_value(input(inputs, "op")?.clone())
                    .map_err(|e| ToolError(format!("op: {e}")))?;
                let path = inputs.get("path").and_then(Value::as_str).unwrap_or(".");
                let payload = inputs.get("payload").and_then(Value::as_str);
                match fs.run(op, path, payload).map_err(|e| ToolError(e.to_string()))? {
                    FsOutput::Text(t) => Ok(json!(t)),
                    FsOutput::Listing(names) => Ok(json!(names)),
                }
            },
        )?;
    }
    Ok(())
}
