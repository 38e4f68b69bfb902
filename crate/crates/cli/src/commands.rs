//! The five subcommands. Each writes human-readable output to `out` and
//! returns the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agent6g_core::comtools::{register_comtools, FsTool};
use agent6g_core::knowledge::{Document, Embedder, KnowledgeBase};
use agent6g_core::mcp::ToolRegistry;
use agent6g_core::mdr::MdrError;
use agent6g_core::mer::{run_loop, MerError, RunContext};
use agent6g_core::provider::AgentProfile;
use agent6g_core::sc_case::{
    desk_corpus, evaluate_spec, parse_corpus, register_sc_tools, CaseConstraints, SCModelSpec, ScEvaluator,
};
use agent6g_core::transcript::{parse_transcript, summarize, Transcript, RUN_END};

use crate::config::RunConfigFile;
use crate::{CliError, EXIT_CONSTRAINTS, EXIT_OK};

type Out<'a> = &'a mut dyn Write;

fn emit(out: Out<'_>, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { emit($out, format_args!($($arg)*)) };
}

fn plural(n: usize, word: &str) -> String {
    format!("{n} {word}{}", if n == 1 { "" } else { "s" })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn doc_id(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Add files to the base at `kb_path` (created if absent). Nothing is
/// written when any file fails.
pub fn cmd_ingest(
    kb_path: &Path,
    files: &[PathBuf],
    chunk_size: usize,
    overlap: usize,
    dim: usize,
    out: Out<'_>,
) -> Result<u8, CliError> {
    if files.is_empty() {
        return Err(CliError::Usage("ingest needs at least one input file".into()));
    }
    let mut kb = if kb_path.exists() { KnowledgeBase::open(kb_path)? } else { KnowledgeBase::new(Embedder::new(dim)) };
    let mut chunks = 0;
    for f in files {
        chunks += kb.add(&Document::new(doc_id(f), read_text(f)?), chunk_size, overlap)?;
    }
    kb.persist(kb_path)?;
    say!(out, "{}, {}", plural(files.len(), "document"), plural(chunks, "chunk"))?;
    say!(
        out,
        "knowledge base: {}, {}, {} of dim {}",
        plural(kb.doc_ids().len(), "document"),
        plural(kb.len(), "chunk"),
        plural(kb.len(), "vector"),
        kb.dim
    )?;
    Ok(EXIT_OK)
}

fn snippet(text: &str, width: usize) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        format!("{}...", flat.chars().take(width).collect::<String>())
    }
}

pub fn cmd_query(kb_path: &Path, question: &str, k: usize, lambda: f64, out: Out<'_>) -> Result<u8, CliError> {
    if !kb_path.exists() {
        return Err(CliError::Usage(format!("knowledge base {} does not exist", kb_path.display())));
    }
    let kb = KnowledgeBase::open(kb_path)?;
    for (rank, hit) in kb.query_scored(question, k, lambda)?.iter().enumerate() {
        say!(
            out,
            "{}\t{}\t{}\t{:.4}\t{}",
            rank + 1,
            hit.chunk.doc_id,
            hit.chunk.seq,
            hit.similarity,
            snippet(&hit.chunk.text, 72)
        )?;
    }
    Ok(EXIT_OK)
}

fn load_corpus(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    let corpus = match path {
        Some(p) => parse_corpus(&read_text(p)?),
        None => desk_corpus(),
    };
    if corpus.is_empty() {
        return Err(CliError::Usage("evaluation corpus is empty".into()));
    }
    Ok(corpus)
}

fn build_kb(cfg: &RunConfigFile) -> Result<Option<KnowledgeBase>, CliError> {
    if !cfg.mdr_enabled {
        return Ok(None);
    }
    let mut kb = match &cfg.kb_path {
        Some(p) => KnowledgeBase::open(p)?,
        None => KnowledgeBase::new(Embedder::new(cfg.embed_dim)),
    };
    for d in &cfg.docs {
        kb.add(&Document::new(doc_id(d), read_text(d)?), cfg.chunk_size, cfg.overlap)?;
    }
    Ok(Some(kb))
}

/// Full run from a config file; exit 0 iff the best result meets every constraint.
pub fn cmd_run(config_path: &Path, out: Out<'_>) -> Result<u8, CliError> {
    let cfg = crate::config::load(config_path)?;
    let provider = cfg.provider.build().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut registry = ToolRegistry::new();
    register_comtools(&mut registry, cfg.sandbox_root.clone().map(FsTool::new))
        .map_err(|e| CliError::Engine(e.to_string()))?;
    let evaluator = ScEvaluator {
        corpus: Arc::new(load_corpus(cfg.corpus.as_deref())?),
        snr_db: cfg.snr_db,
        seed: cfg.sc_seed.unwrap_or(cfg.run.seed),
        constraints: cfg.case_constraints(),
    };
    register_sc_tools(&mut registry, evaluator).map_err(|e| CliError::Engine(e.to_string()))?;

    let kb = build_kb(&cfg)?;
    let mut ctx = RunContext::standard(provider.as_ref(), &registry, kb.as_ref());
    ctx.mdr = cfg.mdr.clone();
    ctx.planners = cfg.planners.clone();
    ctx.judge = cfg.judge.then(AgentProfile::evaluation);
    ctx.embedder = Embedder::new(cfg.embed_dim);

    let mut transcript = Transcript::create(&cfg.transcript_path).map_err(|e| CliError::Engine(e.to_string()))?;
    let result = run_loop(&cfg.task, &ctx, &cfg.run, &mut transcript);
    transcript.finish().map_err(|e| CliError::Engine(format!("transcript: {e}")))?;
    let mut report = match result {
        Ok(r) => r,
        Err(MerError::Mdr(MdrError::RequestRejected(v))) => return Err(CliError::Rejected(v.reason)),
        Err(MerError::AllPlannersFailed) => return Err(CliError::AllPlannersFailed),
        Err(MerError::Mdr(MdrError::Knowledge(e)) | MerError::Knowledge(e)) => return Err(e.into()),
        Err(e) => return Err(CliError::Engine(e.to_string())),
    };
    report.transcript_path = Some(cfg.transcript_path.clone());
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&cfg.report_path, json + "\n").map_err(|e| CliError::io(&cfg.report_path, e))?;

    say!(
        out,
        "best score {:.2} by {} at iteration {}",
        report.best_score.total,
        report.best_planner,
        report.best_iteration
    )?;
    if let Some(spec) = &report.best_spec {
        say!(
            out,
            "best spec: vocab_size={} embed_dim={} repetition={} label={}",
            spec.vocab_size,
            spec.embed_dim,
            spec.repetition,
            spec.label
        )?;
    }
    say!(out, "constraints: {}", if report.constraints_pass { "pass" } else { "fail" })?;
    say!(out, "transcript: {}", cfg.transcript_path.display())?;
    say!(out, "report: {}", cfg.report_path.display())?;
    Ok(if report.constraints_pass { EXIT_OK } else { EXIT_CONSTRAINTS })
}

pub const DEFAULT_SWEEP: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

pub struct ScEvalArgs<'a> {
    pub spec_path: &'a Path,
    pub corpus_path: Option<&'a Path>,
    pub snr_db: f64,
    pub seed: u64,
    pub constraints: CaseConstraints,
    /// When set, print one CSV row per SNR instead of a single report.
    pub sweep: Option<Vec<f64>>,
}

pub fn cmd_sc_eval(args: &ScEvalArgs<'_>, out: Out<'_>) -> Result<u8, CliError> {
    let spec: SCModelSpec = serde_json::from_str(&read_text(args.spec_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.spec_path.display())))?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = load_corpus(args.corpus_path)?;
    let eval = |snr: f64| {
        evaluate_spec(&spec, &corpus, snr, args.seed, &args.constraints).map_err(|e| CliError::Engine(e.to_string()))
    };

    if let Some(points) = &args.sweep {
        say!(out, "snr_db,bleu,similarity")?;
        for &snr in points {
            let r = eval(snr)?;
            say!(out, "{snr},{:.6},{:.6}", r.bleu, r.mean_similarity)?;
        }
        return Ok(EXIT_OK);
    }

    let r = eval(args.snr_db)?;
    say!(out, "snr_db {}", args.snr_db)?;
    say!(out, "bleu {:.6}", r.bleu)?;
    say!(out, "mean_similarity {:.6}", r.mean_similarity)?;
    say!(out, "token_accuracy {:.6}", r.token_accuracy)?;
    say!(out, "param_count {}", r.param_count)?;
    for (name, c) in &r.per_constraint {
        say!(out, "constraint {name}: value={} bound={} pass={}", c.value, c.bound, c.pass)?;
    }
    Ok(if r.constraints_pass { EXIT_OK } else { EXIT_CONSTRAINTS })
}

pub fn cmd_replay(path: &Path, out: Out<'_>) -> Result<u8, CliError> {
    let records = parse_transcript(&read_text(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let start = &records[0];
    say!(out, "run start: {}", start.payload)?;
    for s in summarize(&records) {
        let scores = s.scores.iter().map(|(p, t)| format!("{p} {t:.2}")).collect::<Vec<_>>().join(", ");
        let best = s.best_so_far.map_or("-".to_string(), |b| format!("{b:.2}"));
        let errors = s.events.get("planner_error").copied().unwrap_or(0);
        say!(out, "iteration {}: {} | best so far {} | planner errors {}", s.iteration, scores, best, errors)?;
    }
    let end = records.last().expect("framing checked");
    debug_assert_eq!(end.event, RUN_END);
    match end.score {
        Some(score) => say!(out, "run end: best {score:.2} {}", end.payload)?,
        None => say!(out, "run end: {}", end.payload)?,
    }
    Ok(EXIT_OK)
}
