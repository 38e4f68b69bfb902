//! Evaluation, tiered memory and feedback, and the outer re-planning loop.
//!
//! Chains whose embedding sits far from everything seen so far go to
//! long-term memory; near-duplicates go to short-term memory. Reflexion
//! draws fine-grained suggestions from short-term neighbours of the
//! current chain, refinement draws structural suggestions from a diverse
//! long-term sample.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knowledge::{cosine_unchecked, Embedder, EmbeddingVector, KnowledgeBase, KnowledgeError};
use crate::mcp::{
    execute_chain, plan, prompt_header, ChainResult, Direction, PlanContext, Strategy, SubTaskChain, TaskSpec,
    ToolRegistry, DEFAULT_TOOL_BUDGET,
};
use crate::mdr::{mdr_run, MdrConfig, MdrError, UserRequest};
use crate::provider::{ask, AgentProfile, Provider, ProviderError};
pub use crate::sc_case::FeedbackScope;
use crate::sc_case::SCModelSpec;
use crate::transcript::{Transcript, RUN_END, RUN_START};

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_K_REFLECT: usize = 3;
pub const DEFAULT_M_REFINE: usize = 2;

#[derive(Debug, Error)]
pub enum MerError {
    #[error("no planner produced a score")]
    AllPlannersFailed,
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mdr(#[from] MdrError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub quality: f64,
    pub objective: f64,
    /// Penalty per unit of relative constraint violation.
    pub violation: f64,
    pub penalty_cap: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { quality: 0.4, objective: 0.6, violation: 20.0, penalty_cap: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationScore {
    pub quality: f64,
    pub objective: f64,
    pub penalty: f64,
    pub total: f64,
}

impl EvaluationScore {
    pub fn compose(quality: f64, objective: f64, penalty: f64, w: &ScoreWeights) -> Self {
        let total = (100.0 * (w.quality * quality + w.objective * objective) - penalty).clamp(0.0, 100.0);
        Self { quality, objective, penalty, total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFlag {
    JudgeMalformed,
    MetricMissing,
    ConstraintMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: EvaluationScore,
    pub metric_value: Option<f64>,
    /// name → (value, bound, pass); a missing value counts as a failure.
    pub constraints: BTreeMap<String, (Option<f64>, f64, bool)>,
    /// Metric target met and every constraint satisfied.
    pub constraints_pass: bool,
    pub flags: Vec<EvalFlag>,
}

/// Numeric value for `name`: an artifact stored under that key, or a
/// field of that name inside an object artifact (first in key order).
pub fn lookup_metric(artifacts: &BTreeMap<String, Value>, name: &str) -> Option<f64> {
    if let Some(v) = artifacts.get(name).and_then(Value::as_f64) {
        return Some(v);
    }
    artifacts.values().find_map(|v| v.as_object().and_then(|o| o.get(name)).and_then(Value::as_f64))
}

/// Violation relative to the bound; absolute when the bound is zero.
pub fn relative_violation(value: f64, bound: f64, direction: Direction) -> f64 {
    let excess = match direction {
        Direction::AtLeast => bound - value,
        Direction::AtMost => value - bound,
    };
    if excess <= 0.0 {
        0.0
    } else if bound == 0.0 {
        excess
    } else {
        excess / bound.abs()
    }
}

fn parse_quality(reply: &str) -> Option<f64> {
    reply.trim().parse::<f64>().ok().filter(|q| (0.0..=1.0).contains(q))
}

pub fn evaluate_result(
    result: &ChainResult,
    task: &TaskSpec,
    judge: Option<&AgentProfile>,
    provider: &dyn Provider,
    weights: &ScoreWeights,
) -> Result<Evaluation, ProviderError> {
    let mut flags = Vec::new();
    let fraction = result.produced_fraction();
    let mut quality = if result.succeeded && fraction >= 1.0 { 1.0 } else { fraction.min(1.0 - f64::EPSILON) };

    if let Some(judge) = judge {
        let sections = [(
            "Result".to_string(),
            json!({"succeeded": result.succeeded, "artifacts": result.artifacts}).to_string(),
        )];
        let reply = ask(
            judge,
            &sections,
            &format!(
                "{} Rate the quality of this result with one number between 0 and 1.",
                prompt_header(&result.planner_id, result.iteration)
            ),
            provider,
        )?;
        match parse_quality(&reply) {
            Some(q) => quality = q,
            None => {
                tracing::warn!(reply = %reply, "judge reply is not a quality value; override ignored");
                flags.push(EvalFlag::JudgeMalformed);
            }
        }
    }

    let metric_value = lookup_metric(&result.artifacts, &task.metric_name);
    let objective = match metric_value {
        Some(v) => v.clamp(0.0, 1.0),
        None => {
            flags.push(EvalFlag::MetricMissing);
            0.0
        }
    };
    let mut penalty = 0.0;
    let mut constraints = BTreeMap::new();
    for c in &task.constraints {
        let value = lookup_metric(&result.artifacts, &c.name);
        let pass = match value {
            Some(v) => {
                penalty += weights.violation * relative_violation(v, c.bound, c.direction);
                c.direction.satisfied(v, c.bound)
            }
            None => {
                if !flags.contains(&EvalFlag::ConstraintMissing) {
                    flags.push(EvalFlag::ConstraintMissing);
                }
                false
            }
        };
        constraints.insert(c.name.clone(), (value, c.bound, pass));
    }
    let penalty = penalty.min(weights.penalty_cap);
    let target_met = metric_value.is_some_and(|v| task.metric_direction.satisfied(v, task.metric_target));
    Ok(Evaluation {
        score: EvaluationScore::compose(quality, objective, penalty, weights),
        metric_value,
        constraints_pass: target_met && constraints.values().all(|(_, _, p)| *p),
        constraints,
        flags,
    })
}

/// sha256 over the canonical JSON of the artifact map.
pub fn result_digest(result: &ChainResult) -> String {
    let canonical = serde_json::to_string(&result.artifacts).expect("artifacts serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

// ---------------------------------------------------------------------------
// Memory
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    ShortTerm,
    LongTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: usize,
    pub chain_text: String,
    pub subtask_ids: Vec<String>,
    pub embedding: EmbeddingVector,
    pub result_digest: String,
    pub score: EvaluationScore,
    pub tier: Tier,
    pub novelty: f64,
    pub iteration: usize,
    pub planner_id: String,
}

#[derive(Debug, Clone)]
pub struct Memory {
    tau: f64,
    embedder: Embedder,
    entries: Vec<MemoryEntry>,
}

/// Fields of an entry other than its embedding and tier.
#[derive(Debug, Clone)]
pub struct EntryInput {
    pub chain_text: String,
    pub subtask_ids: Vec<String>,
    pub result_digest: String,
    pub score: EvaluationScore,
    pub iteration: usize,
    pub planner_id: String,
}

impl Memory {
    pub fn new(tau: f64, embedder: Embedder) -> Self {
        Self { tau, embedder, entries: Vec::new() }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> Option<&MemoryEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tier(&self, tier: Tier) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter().filter(move |e| e.tier == tier)
    }

    /// 1 − max cosine to any stored entry; 1 for an empty memory.
    pub fn novelty(&self, embedding: &EmbeddingVector) -> f64 {
        self.entries
            .iter()
            .map(|e| cosine_unchecked(&e.embedding, embedding))
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))))
            .map_or(1.0, |max| 1.0 - max)
    }

    /// Store a chain, embedding its canonical text.
    pub fn store(
        &mut self,
        chain: &SubTaskChain,
        result_digest: String,
        score: EvaluationScore,
        iteration: usize,
    ) -> &MemoryEntry {
        let chain_text = chain.canonical_text();
        let embedding = self.embedder.embed(&chain_text);
        let input = EntryInput {
            chain_text,
            subtask_ids: chain.subtasks.iter().map(|t| t.id.clone()).collect(),
            result_digest,
            score,
            iteration,
            planner_id: chain.planner_id.clone(),
        };
        self.push(input, embedding)
    }

    /// Store with a caller-supplied embedding, for constructed fixtures.
    /// All embeddings in one memory must share a dimension.
    pub fn store_embedded(&mut self, input: EntryInput, embedding: EmbeddingVector) -> Result<&MemoryEntry, KnowledgeError> {
        if let Some(first) = self.entries.first() {
            if first.embedding.dim() != embedding.dim() {
                return Err(KnowledgeError::DimMismatch(first.embedding.dim(), embedding.dim()));
            }
        }
        Ok(self.push(input, embedding))
    }

    fn push(&mut self, input: EntryInput, embedding: EmbeddingVector) -> &MemoryEntry {
        let novelty = self.novelty(&embedding);
        let tier = if novelty >= self.tau { Tier::LongTerm } else { Tier::ShortTerm };
        let id = self.entries.len();
        self.entries.push(MemoryEntry {
            id,
            chain_text: input.chain_text,
            subtask_ids: input.subtask_ids,
            embedding,
            result_digest: input.result_digest,
            score: input.score,
            tier,
            novelty,
            iteration: input.iteration,
            planner_id: input.planner_id,
        });
        &self.entries[id]
    }

    fn similarity(&self, a: usize, b: usize) -> f64 {
        cosine_unchecked(&self.entries[a].embedding, &self.entries[b].embedding)
    }

    /// The `k` short-term entries most similar to `current` (excluding it);
    /// ties go to the older entry.
    pub fn reflect_selection(&self, current: usize, k: usize) -> Vec<usize> {
        let mut candidates: Vec<(f64, usize)> = self
            .tier(Tier::ShortTerm)
            .filter(|e| e.id != current)
            .map(|e| (self.similarity(current, e.id), e.id))
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.into_iter().take(k).map(|(_, id)| id).collect()
    }

    /// Greedy farthest-point sample of `m` long-term entries, seeded with
    /// the highest-scoring one. Distance is 1 − cosine; ties go to the older entry.
    pub fn refine_selection(&self, m: usize) -> Vec<usize> {
        let pool: Vec<usize> = self.tier(Tier::LongTerm).map(|e| e.id).collect();
        let Some(&start) = pool.iter().max_by(|&&a, &&b| {
            self.entries[a].score.total.total_cmp(&self.entries[b].score.total).then(b.cmp(&a))
        }) else {
            return Vec::new();
        };
        let mut selected = vec![start];
        while selected.len() < m.min(pool.len()) {
            let next = pool
                .iter()
                .filter(|id| !selected.contains(id))
                .map(|&id| {
                    let d = selected.iter().map(|&s| 1.0 - self.similarity(s, id)).fold(f64::INFINITY, f64::min);
                    (d, id)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, id)| id)
                .expect("pool has unselected entries");
            selected.push(next);
        }
        selected
    }
}

// ---------------------------------------------------------------------------
// Feedback
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub scope: FeedbackScope,
    pub suggestions: Vec<String>,
    pub target_subtasks: Vec<String>,
    pub source_entries: Vec<usize>,
}

impl Feedback {
    pub fn noop(scope: FeedbackScope) -> Self {
        Self { scope, suggestions: Vec::new(), target_subtasks: Vec::new(), source_entries: Vec::new() }
    }

    pub fn is_noop(&self) -> bool {
        self.suggestions.is_empty()
    }

    pub fn scope_label(&self) -> &'static str {
        match self.scope {
            FeedbackScope::Fine => "fine",
            FeedbackScope::Coarse => "coarse",
        }
    }
}

fn suggestion_lines(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|l| l.trim().trim_start_matches("- ").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn entry_section(label: String, e: &MemoryEntry) -> (String, String) {
    (
        label,
        format!("planner {} | iteration {} | score {:.2}\n{}", e.planner_id, e.iteration, e.score.total, e.chain_text),
    )
}

/// Fine-grained feedback from the short-term neighbours of `current`.
pub fn reflect(
    memory: &Memory,
    current: usize,
    profile: &AgentProfile,
    provider: &dyn Provider,
    k: usize,
) -> Result<Feedback, ProviderError> {
    let selected = memory.reflect_selection(current, k);
    if selected.is_empty() {
        tracing::debug!(current, "short-term memory is empty; reflexion skipped");
        return Ok(Feedback::noop(FeedbackScope::Fine));
    }
    let cur = &memory.entries[current];
    let mut sections: Vec<(String, String)> = selected
        .iter()
        .enumerate()
        .map(|(i, &id)| entry_section(format!("Short-term memory {}", i + 1), &memory.entries[id]))
        .collect();
    sections.push(entry_section("Current chain".to_string(), cur));
    let message = format!(
        "{} Reflect on the similar chains above and suggest fine-grained adjustments, one per line. \
         Prefix a line with '<subtask-id>: ' to target a sub-task.",
        prompt_header(&cur.planner_id, cur.iteration)
    );
    let reply = ask(profile, &sections, &message, provider)?;
    let suggestions = suggestion_lines(&reply);
    let mut target_subtasks: Vec<String> = Vec::new();
    for s in &suggestions {
        if let Some((id, _)) = s.split_once(':') {
            let id = id.trim();
            if cur.subtask_ids.iter().any(|t| t == id) && !target_subtasks.iter().any(|t| t == id) {
                target_subtasks.push(id.to_string());
            }
        }
    }
    Ok(Feedback { scope: FeedbackScope::Fine, suggestions, target_subtasks, source_entries: selected })
}

/// Coarse-grained feedback from a diverse long-term sample.
pub fn refine(
    memory: &Memory,
    current: usize,
    profile: &AgentProfile,
    provider: &dyn Provider,
    m: usize,
) -> Result<Feedback, ProviderError> {
    let selected = memory.refine_selection(m);
    if selected.is_empty() {
        tracing::debug!(current, "long-term memory is empty; refinement skipped");
        return Ok(Feedback::noop(FeedbackScope::Coarse));
    }
    let cur = &memory.entries[current];
    let sections: Vec<(String, String)> = selected
        .iter()
        .enumerate()
        .map(|(i, &id)| entry_section(format!("Long-term memory {}", i + 1), &memory.entries[id]))
        .collect();
    let message = format!(
        "{} Compare the distinct chains above and suggest structural adjustments, one per line.",
        prompt_header(&cur.planner_id, cur.iteration)
    );
    let reply = ask(profile, &sections, &message, provider)?;
    Ok(Feedback {
        scope: FeedbackScope::Coarse,
        suggestions: suggestion_lines(&reply),
        target_subtasks: Vec::new(),
        source_entries: selected,
    })
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub planner_count: usize,
    pub iterations: usize,
    pub score_threshold: f64,
    pub tau: f64,
    pub seed: u64,
    pub k_reflect: usize,
    pub m_refine: usize,
    pub tool_budget: usize,
    pub weights: ScoreWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            planner_count: 2,
            iterations: 4,
            score_threshold: 100.0,
            tau: DEFAULT_TAU,
            seed: 7,
            k_reflect: DEFAULT_K_REFLECT,
            m_refine: DEFAULT_M_REFINE,
            tool_budget: DEFAULT_TOOL_BUDGET,
            weights: ScoreWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), MerError> {
        if self.planner_count == 0 {
            return Err(MerError::InvalidConfig("planner_count must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(MerError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.score_threshold) {
            return Err(MerError::InvalidConfig("score_threshold must lie in [0, 100]".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(MerError::InvalidConfig("tau must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn digest(&self, task: &TaskSpec) -> String {
        let canonical = json!({"run": self, "task": task}).to_string();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone)]
pub struct PlannerSetup {
    pub profile: AgentProfile,
    pub strategy: Strategy,
}

/// Agents, tools and knowledge shared by every iteration.
pub struct RunContext<'a> {
    pub provider: &'a dyn Provider,
    pub registry: &'a ToolRegistry,
    /// `None` disables retrieval; the task's existing context is used.
    pub kb: Option<&'a KnowledgeBase>,
    pub mdr: MdrConfig,
    pub planners: Vec<PlannerSetup>,
    pub judge: Option<AgentProfile>,
    pub reflexion: AgentProfile,
    pub refinement: AgentProfile,
    pub embedder: Embedder,
}

impl<'a> RunContext<'a> {
    /// Two planners (CoT and plan-and-solve) with the standard agents.
    pub fn standard(provider: &'a dyn Provider, registry: &'a ToolRegistry, kb: Option<&'a KnowledgeBase>) -> Self {
        Self {
            provider,
            registry,
            kb,
            mdr: MdrConfig::default(),
            planners: vec![
                PlannerSetup {
                    profile: AgentProfile::planner("planner-a", "favours incremental parameter tuning"),
                    strategy: Strategy::Cot,
                },
                PlannerSetup {
                    profile: AgentProfile::planner("planner-b", "favours structural exploration"),
                    strategy: Strategy::PlanAndSolve,
                },
            ],
            judge: None,
            reflexion: AgentProfile::reflexion(),
            refinement: AgentProfile::refinement(),
            embedder: Embedder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationScore {
    pub iteration: usize,
    pub planner_id: String,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The `spec` artifact of the best result, when it parses as one.
    pub best_spec: Option<SCModelSpec>,
    pub best_artifacts: BTreeMap<String, Value>,
    pub best_score: EvaluationScore,
    pub best_planner: String,
    pub best_iteration: usize,
    pub constraints_pass: bool,
    pub per_iteration: Vec<IterationScore>,
    /// Best total after each completed iteration.
    pub best_so_far: Vec<f64>,
    pub transcript_path: Option<PathBuf>,
}

struct Best {
    eval: Evaluation,
    result: ChainResult,
}

/// The outer loop: retrieval once, then per iteration and planner
/// plan → execute → evaluate → store → reflect → refine.
///
/// Each planner receives its own reflexion feedback plus every planner's
/// refinement feedback from the previous iteration. Planners run in a fixed
/// order so memory tiers and transcripts are reproducible.
pub fn run_loop(
    task: &TaskSpec,
    ctx: &RunContext<'_>,
    cfg: &RunConfig,
    transcript: &mut Transcript,
) -> Result<RunReport, MerError> {
    cfg.validate()?;
    if ctx.planners.len() < cfg.planner_count {
        return Err(MerError::InvalidConfig(format!(
            "planner_count {} exceeds the {} configured planners",
            cfg.planner_count,
            ctx.planners.len()
        )));
    }
    let planners = &ctx.planners[..cfg.planner_count];
    transcript.record(
        0,
        None,
        RUN_START,
        json!({
            "config_digest": cfg.digest(task),
            "planners": planners.iter().map(|p| &p.profile.name).collect::<Vec<_>>(),
            "iterations": cfg.iterations,
        }),
        None,
    );

    let mut task = task.clone();
    if let Some(kb) = ctx.kb {
        let req = UserRequest::at(task.objective.clone(), 0);
        match mdr_run(&req, kb, &ctx.mdr, ctx.provider, transcript) {
            Ok(dk) => task.context = dk,
            Err(e) => {
                transcript.record(0, None, RUN_END, json!({"error": e.to_string()}), None);
                return Err(e.into());
            }
        }
    }

    let mut memory = Memory::new(cfg.tau, ctx.embedder);
    let mut own_feedback: Vec<Option<Feedback>> = vec![None; planners.len()];
    let mut shared_feedback: Vec<Feedback> = Vec::new();
    let mut best: Option<Best> = None;
    let mut per_iteration = Vec::new();
    let mut best_so_far = Vec::new();

    for iteration in 1..=cfg.iterations {
        let mut next_own: Vec<Option<Feedback>> = vec![None; planners.len()];
        let mut next_shared = Vec::new();
        for (pi, planner) in planners.iter().enumerate() {
            let pid = planner.profile.name.as_str();
            let feedback: Vec<Feedback> = own_feedback[pi].iter().chain(&shared_feedback).cloned().collect();
            let plan_ctx = PlanContext { planner_id: pid, iteration, registry: Some(ctx.registry) };
            let chain = match plan(&task, &planner.profile, planner.strategy, &feedback, ctx.provider, &plan_ctx) {
                Ok(c) => c,
                Err(e) => {
                    transcript.record(iteration, Some(pid), "planner_error", json!({"stage": "plan", "error": e.to_string()}), None);
                    continue;
                }
            };
            transcript.record(
                iteration,
                Some(pid),
                "planned",
                json!({
                    "strategy": planner.strategy,
                    "feedback": feedback.iter().map(|f| f.suggestions.len()).sum::<usize>(),
                    "order": chain.topo_ids(),
                    "chain": chain.canonical_text(),
                }),
                None,
            );

            let result = execute_chain(&chain, ctx.registry, cfg.tool_budget, iteration);
            transcript.record(
                iteration,
                Some(pid),
                "executed",
                json!({
                    "succeeded": result.succeeded,
                    "tool_calls": result.tool_calls,
                    "artifacts": result.artifacts.keys().collect::<Vec<_>>(),
                    "error": result.error.as_ref().map(ToString::to_string),
                }),
                None,
            );

            let eval = match evaluate_result(&result, &task, ctx.judge.as_ref(), ctx.provider, &cfg.weights) {
                Ok(e) => e,
                Err(e) => {
                    transcript.record(iteration, Some(pid), "planner_error", json!({"stage": "evaluate", "error": e.to_string()}), None);
                    continue;
                }
            };
            transcript.record(
                iteration,
                Some(pid),
                "evaluated",
                json!({
                    "quality": eval.score.quality,
                    "objective": eval.score.objective,
                    "penalty": eval.score.penalty,
                    "metric": eval.metric_value,
                    "constraints_pass": eval.constraints_pass,
                    "flags": eval.flags,
                }),
                Some(eval.score.total),
            );
            per_iteration.push(IterationScore { iteration, planner_id: pid.to_string(), total: eval.score.total });

            let entry = memory.store(&chain, result_digest(&result), eval.score, iteration);
            let entry_id = entry.id;
            transcript.record(
                iteration,
                Some(pid),
                "stored",
                json!({"entry": entry_id, "tier": entry.tier, "novelty": entry.novelty, "digest": entry.result_digest}),
                Some(eval.score.total),
            );

            if best.as_ref().is_none_or(|b| eval.score.total > b.eval.score.total) {
                best = Some(Best { eval, result });
            }

            match reflect(&memory, entry_id, &ctx.reflexion, ctx.provider, cfg.k_reflect) {
                Ok(fb) => {
                    transcript.record(iteration, Some(pid), "reflected", feedback_payload(&fb), None);
                    if !fb.is_noop() {
                        next_own[pi] = Some(fb);
                    }
                }
                Err(e) => transcript.record(iteration, Some(pid), "planner_error", json!({"stage": "reflect", "error": e.to_string()}), None),
            }
            match refine(&memory, entry_id, &ctx.refinement, ctx.provider, cfg.m_refine) {
                Ok(fb) => {
                    transcript.record(iteration, Some(pid), "refined", feedback_payload(&fb), None);
                    if !fb.is_noop() {
                        next_shared.push(fb);
                    }
                }
                Err(e) => transcript.record(iteration, Some(pid), "planner_error", json!({"stage": "refine", "error": e.to_string()}), None),
            }
        }
        own_feedback = next_own;
        shared_feedback = next_shared;

        let best_total = best.as_ref().map(|b| b.eval.score.total);
        if let Some(t) = best_total {
            best_so_far.push(t);
        }
        transcript.record(iteration, None, "iteration_end", json!({"evaluated": per_iteration.iter().filter(|s| s.iteration == iteration).count()}), best_total);
        if best_total.is_some_and(|t| t >= cfg.score_threshold) {
            break;
        }
    }

    let Some(best) = best else {
        transcript.record(0, None, RUN_END, json!({"error": "all planners failed"}), None);
        return Err(MerError::AllPlannersFailed);
    };
    let best_spec = best.result.artifacts.get("spec").and_then(|v| serde_json::from_value(v.clone()).ok());
    transcript.record(
        0,
        None,
        RUN_END,
        json!({
            "best_planner": best.result.planner_id,
            "best_iteration": best.result.iteration,
            "constraints_pass": best.eval.constraints_pass,
        }),
        Some(best.eval.score.total),
    );
    Ok(RunReport {
        best_spec,
        best_score: best.eval.score,
        best_planner: best.result.planner_id.clone(),
        best_iteration: best.result.iteration,
        constraints_pass: best.eval.constraints_pass,
        best_artifacts: best.result.artifacts,
        per_iteration,
        best_so_far,
        transcript_path: None,
    })
}

fn feedback_payload(fb: &Feedback) -> Value {
    json!({
        "scope": fb.scope,
        "suggestions": fb.suggestions,
        "targets": fb.target_subtasks,
        "sources": fb.source_entries,
    })
}
