//! Desk-scale semantic-communication case harness.
//!
//! A seeded codebook codec stands in for trained encoders: each token maps
//! to a random ±1/√d codeword (semantic encoder), codewords are repeated
//! `r` times (channel encoder), sent over AWGN, averaged (channel decoder)
//! and mapped back to the nearest codeword by cosine (semantic decoder).

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::comtools::{awgn_transmit, bleu_score, bleu_tokenize, count_params, semantic_similarity, ChannelConfig, ComtoolsError, Signal};
use crate::mcp::{McpError, ToolError, ToolInputs, ToolRegistry, ToolSpec};

pub const OOV_TOKEN: &str = "<unk>";
pub const DEFAULT_MIN_BLEU: f64 = 0.6;
pub const DEFAULT_MAX_PARAMS: u64 = 2_000_000;
pub const DEFAULT_SNR_DB: f64 = 10.0;
pub const MIN_EMBED_DIM: usize = 4;

const DESK_CORPUS: &str = include_str!("../assets/desk_corpus.txt");

/// The bundled 200-sentence dialogue corpus.
pub fn desk_corpus() -> Vec<String> {
    parse_corpus(DESK_CORPUS)
}

/// One sentence per line; blank lines skipped.
pub fn parse_corpus(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Error)]
pub enum ScError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("text has no tokens")]
    EmptyText,
    #[error(transparent)]
    Channel(#[from] ComtoolsError),
}

/// Declarative codec configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SCModelSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub repetition: usize,
    pub codebook_seed: u64,
    #[serde(default)]
    pub label: String,
}

impl SCModelSpec {
    pub fn validate(&self) -> Result<(), ScError> {
        if self.vocab_size < 2 {
            return Err(ScError::InvalidSpec(format!("vocab_size {} < 2", self.vocab_size)));
        }
        if self.embed_dim < MIN_EMBED_DIM {
            return Err(ScError::InvalidSpec(format!("embed_dim {} < {MIN_EMBED_DIM}", self.embed_dim)));
        }
        if self.repetition < 1 {
            return Err(ScError::InvalidSpec("repetition must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SCCodec {
    pub spec: SCModelSpec,
    pub vocab: HashMap<String, usize>,
    /// id -> token; ids past the corpus vocabulary decode to the OOV token.
    pub tokens: Vec<String>,
    pub codebook: Vec<Vec<f64>>,
}

/// Build the vocabulary (frequency order, ties lexicographic, OOV at id 0)
/// and the seeded ±1/√d codebook.
pub fn build_codec(spec: &SCModelSpec, corpus: &[String]) -> Result<SCCodec, ScError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(ScError::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for sentence in corpus {
        for tok in bleu_tokenize(sentence) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec![OOV_TOKEN.to_string()];
    tokens.extend(ranked.into_iter().take(spec.vocab_size - 1).map(|(t, _)| t));
    let vocab = tokens.iter().enumerate().skip(1).map(|(i, t)| (t.clone(), i)).collect();

    let amp = 1.0 / (spec.embed_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.codebook_seed);
    let codebook = (0..spec.vocab_size)
        .map(|_| (0..spec.embed_dim).map(|_| if rng.random::<bool>() { amp } else { -amp }).collect())
        .collect();
    Ok(SCCodec { spec: spec.clone(), vocab, tokens, codebook })
}

/// Result of sending one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub sent: Vec<usize>,
    pub recovered: Vec<usize>,
    pub text: String,
}

impl SCCodec {
    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.get(t).copied().unwrap_or(0)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(OOV_TOKEN)
    }

    /// Repeat each codeword `r` times and normalize to unit mean squared
    /// amplitude. Any global gain cancels under measured-power SNR, so the
    /// ±1/√d entries become ±1 samples.
    pub fn channel_encode(&self, ids: &[usize]) -> Signal {
        let d = self.spec.embed_dim;
        let gain = (d as f64).sqrt();
        let mut samples = Vec::with_capacity(ids.len() * d * self.spec.repetition);
        for &id in ids {
            for _ in 0..self.spec.repetition {
                samples.extend(self.codebook[id].iter().map(|x| x * gain));
            }
        }
        Signal::new(samples)
    }

    /// Average the repeated copies and pick the nearest codeword by cosine;
    /// ties go to the lowest id.
    pub fn decode(&self, received: &Signal) -> Vec<usize> {
        let d = self.spec.embed_dim;
        let r = self.spec.repetition;
        received
            .samples
            .chunks(d * r)
            .map(|block| {
                let mut avg = vec![0.0; d];
                for copy in block.chunks(d) {
                    for (a, x) in avg.iter_mut().zip(copy) {
                        *a += x;
                    }
                }
                // Rows are unit norm and |avg| is shared, so cosine order = dot order.
                let mut best = (0usize, f64::NEG_INFINITY);
                for (id, row) in self.codebook.iter().enumerate() {
                    let dot: f64 = row.iter().zip(&avg).map(|(a, b)| a * b).sum();
                    if dot > best.1 {
                        best = (id, dot);
                    }
                }
                best.0
            })
            .collect()
    }

    pub fn transmit(&self, text: &str, channel: &ChannelConfig) -> Result<Transmission, ScError> {
        let tokens = bleu_tokenize(text);
        if tokens.is_empty() {
            return Err(ScError::EmptyText);
        }
        let sent = self.encode_tokens(&tokens);
        let received = awgn_transmit(&self.channel_encode(&sent), channel)?;
        let recovered = self.decode(&received);
        let text = recovered.iter().map(|&id| self.token(id)).collect::<Vec<_>>().join(" ");
        Ok(Transmission { sent, recovered, text })
    }
}

/// Send one sentence through the codec and channel; returns the recovered sentence.
pub fn sc_transmit(text: &str, codec: &SCCodec, channel: &ChannelConfig) -> Result<String, ScError> {
    Ok(codec.transmit(text, channel)?.text)
}

/// SplitMix64 finalizer; derives per-sentence channel seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseConstraints {
    pub min_bleu: f64,
    pub max_params: u64,
}

impl Default for CaseConstraints {
    fn default() -> Self {
        Self { min_bleu: DEFAULT_MIN_BLEU, max_params: DEFAULT_MAX_PARAMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub bleu: f64,
    pub mean_similarity: f64,
    pub param_count: u64,
    pub token_accuracy: f64,
    pub constraints_pass: bool,
    pub per_constraint: BTreeMap<String, ConstraintCheck>,
}

/// Build the codec over `corpus`, send every sentence at `snr_db` with a
/// per-sentence derived seed, and score the recovered corpus.
pub fn evaluate_spec(
    spec: &SCModelSpec,
    corpus: &[String],
    snr_db: f64,
    seed: u64,
    constraints: &CaseConstraints,
) -> Result<ObjectiveReport, ScError> {
    let codec = build_codec(spec, corpus)?;
    let sent: Vec<(Vec<String>, Transmission)> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, sentence)| {
            let channel = ChannelConfig { snr_db, seed: derive_seed(seed, i as u64) };
            Ok((bleu_tokenize(sentence), codec.transmit(sentence, &channel)?))
        })
        .collect::<Result<_, ScError>>()?;

    let references: Vec<Vec<String>> = sent.iter().map(|(r, _)| r.clone()).collect();
    let candidates: Vec<Vec<String>> = sent
        .iter()
        .map(|(_, t)| t.recovered.iter().map(|&id| codec.token(id).to_string()).collect())
        .collect();
    let bleu = bleu_score(&candidates, &references, 4)?;
    let mean_similarity = sent
        .iter()
        .map(|(r, t)| semantic_similarity(&r.join(" "), &t.text))
        .sum::<f64>()
        / sent.len() as f64;
    let (hits, total) = sent.iter().fold((0usize, 0usize), |(h, n), (_, t)| {
        (h + t.sent.iter().zip(&t.recovered).filter(|(a, b)| a == b).count(), n + t.sent.len())
    });
    let param_count = count_params(spec);

    let mut per_constraint = BTreeMap::new();
    per_constraint.insert(
        "bleu".to_string(),
        ConstraintCheck { value: bleu, bound: constraints.min_bleu, pass: bleu >= constraints.min_bleu },
    );
    per_constraint.insert(
        "params".to_string(),
        ConstraintCheck {
            value: param_count as f64,
            bound: constraints.max_params as f64,
            pass: param_count <= constraints.max_params,
        },
    );
    Ok(ObjectiveReport {
        bleu,
        mean_similarity,
        param_count,
        token_accuracy: hits as f64 / total as f64,
        constraints_pass: per_constraint.values().all(|c| c.pass),
        per_constraint,
    })
}

// ---------------------------------------------------------------------------
// Mutation and heuristic search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackScope {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutationLimits {
    pub max_embed_dim: usize,
}

impl Default for MutationLimits {
    fn default() -> Self {
        Self { max_embed_dim: 1024 }
    }
}

impl MutationLimits {
    /// Largest embedding dimension keeping `vocab_size` within `max_params`.
    pub fn for_budget(vocab_size: usize, max_params: u64) -> Self {
        let cap = (max_params / (vocab_size as u64 + 1)) as usize;
        Self { max_embed_dim: cap.max(MIN_EMBED_DIM) }
    }
}

/// Fine: repetition ±1 or embed_dim ±25%. Coarse: new codebook seed and
/// embed_dim jumps to the next power of two up or down. Results are always
/// valid and respect `limits`.
pub fn mutate_spec<R: Rng + ?Sized>(
    spec: &SCModelSpec,
    scope: FeedbackScope,
    limits: &MutationLimits,
    rng: &mut R,
) -> SCModelSpec {
    let max_dim = limits.max_embed_dim.max(MIN_EMBED_DIM);
    let mut out = spec.clone();
    out.vocab_size = out.vocab_size.max(2);
    out.repetition = out.repetition.max(1);
    match scope {
        FeedbackScope::Fine => {
            let up = rng.random::<bool>();
            if rng.random::<bool>() {
                out.repetition = if up { out.repetition + 1 } else { (out.repetition - 1).max(1) };
            } else {
                let d = out.embed_dim as f64;
                let next = if up { (d * 1.25).round() } else { (d * 0.75).round() } as usize;
                out.embed_dim = next;
            }
        }
        FeedbackScope::Coarse => {
            out.codebook_seed = rng.random();
            let d = out.embed_dim.max(1);
            let up = if d.is_power_of_two() { d * 2 } else { d.next_power_of_two() };
            let down = if d.is_power_of_two() { d / 2 } else { d.next_power_of_two() / 2 };
            let go_up = rng.random::<bool>();
            out.embed_dim = match (go_up, up <= max_dim, down >= MIN_EMBED_DIM) {
                (true, true, _) | (false, true, false) => up,
                (false, _, true) | (true, false, true) => down,
                _ => out.embed_dim,
            };
        }
    }
    out.embed_dim = out.embed_dim.clamp(MIN_EMBED_DIM, max_dim);
    out
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub iterations: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub constraints: CaseConstraints,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { iterations: 10, snr_db: DEFAULT_SNR_DB, seed: 7, constraints: CaseConstraints::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SearchStep {
    pub iteration: usize,
    pub spec: SCModelSpec,
    pub report: ObjectiveReport,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: SearchStep,
    pub history: Vec<SearchStep>,
    pub satisfied_at: Option<usize>,
}

fn rank(report: &ObjectiveReport) -> (bool, f64) {
    (report.per_constraint.get("params").is_some_and(|c| c.pass), report.bleu)
}

/// Hill climb without any language model: each iteration proposes one fine
/// and one coarse mutation of the incumbent and keeps the better of the
/// three. Stops once every constraint passes.
pub fn heuristic_search(start: &SCModelSpec, corpus: &[String], cfg: &SearchConfig) -> Result<SearchOutcome, ScError> {
    let limits = MutationLimits::for_budget(start.vocab_size, cfg.constraints.max_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = |spec: &SCModelSpec| evaluate_spec(spec, corpus, cfg.snr_db, cfg.seed, &cfg.constraints);

    let mut best = SearchStep { iteration: 0, spec: start.clone(), report: eval(start)? };
    let mut history = vec![best.clone()];
    let mut satisfied_at = best.report.constraints_pass.then_some(0);
    for iteration in 1..=cfg.iterations {
        if satisfied_at.is_some() {
            break;
        }
        for scope in [FeedbackScope::Fine, FeedbackScope::Coarse] {
            let spec = mutate_spec(&best.spec, scope, &limits, &mut rng);
            let report = eval(&spec)?;
            let step = SearchStep { iteration, spec, report };
            history.push(step.clone());
            if rank(&step.report).partial_cmp(&rank(&best.report)) == Some(std::cmp::Ordering::Greater) {
                best = step;
            }
        }
        if best.report.constraints_pass {
            satisfied_at = Some(iteration);
        }
    }
    Ok(SearchOutcome { best, history, satisfied_at })
}

// ---------------------------------------------------------------------------
// Registry adapters
// ---------------------------------------------------------------------------

/// Evaluation context shared by the `sc_evaluate` tool.
#[derive(Debug, Clone)]
pub struct ScEvaluator {
    pub corpus: Arc<Vec<String>>,
    pub snr_db: f64,
    pub seed: u64,
    pub constraints: CaseConstraints,
}

fn spec_input(inputs: &ToolInputs) -> Result<SCModelSpec, ToolError> {
    let raw = inputs.get("spec").ok_or_else(|| ToolError("missing input 'spec'".into()))?;
    let spec: SCModelSpec = serde_json::from_value(raw.clone()).map_err(|e| ToolError(format!("spec: {e}")))?;
    spec.validate().map_err(|e| ToolError(e.to_string()))?;
    Ok(spec)
}

/// Register `sc_spec` (validate and assemble a spec from its fields) and
/// `sc_evaluate` (spec -> flat objective report).
pub fn register_sc_tools(registry: &mut ToolRegistry, evaluator: ScEvaluator) -> Result<(), McpError> {
    registry.register(
        ToolSpec::new("sc_spec", "assemble and validate a semantic codec spec", true).with_schema(
            [("vocab_size", "int"), ("embed_dim", "int"), ("repetition", "int"), ("codebook_seed", "int"), ("label", "text")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        ),
        |inputs: &ToolInputs| {
            let obj: serde_json::Map<String, Value> = inputs.clone().into_iter().collect();
            let spec: SCModelSpec =
                serde_json::from_value(Value::Object(obj)).map_err(|e| ToolError(format!("spec fields: {e}")))?;
            spec.validate().map_err(|e| ToolError(e.to_string()))?;
            serde_json::to_value(spec).map_err(|e| ToolError(e.to_string()))
        },
    )?;
    registry.register(
        ToolSpec::new("sc_evaluate", "transmit the evaluation corpus over AWGN and score it", true)
            .with_schema([("spec".to_string(), "SCModelSpec".to_string())].into_iter().collect()),
        move |inputs: &ToolInputs| {
            let spec = spec_input(inputs)?;
            let r = evaluate_spec(&spec, &evaluator.corpus, evaluator.snr_db, evaluator.seed, &evaluator.constraints)
                .map_err(|e| ToolError(e.to_string()))?;
            Ok(json!({
                "bleu": r.bleu,
                "mean_similarity": r.mean_similarity,
                "token_accuracy": r.token_accuracy,
                "params": r.param_count,
                "constraints_pass": r.constraints_pass,
                "snr_db": evaluator.snr_db,
            }))
        },
    )?;
    Ok(())
}
