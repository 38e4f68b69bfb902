//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`provider.kind`, `run.iterations`, ...). `#` starts a
//! comment line. Unknown and repeated keys are errors. Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use agent6g_core::knowledge::{DEFAULT_CHUNK_SIZE, DEFAULT_DIM, DEFAULT_OVERLAP};
use agent6g_core::mcp::{Constraint, Direction, Strategy, TaskSpec};
use agent6g_core::mdr::{DenyList, MdrConfig};
use agent6g_core::mer::{PlannerSetup, RunConfig};
use agent6g_core::provider::{parse_script, AgentProfile, ProviderConfig, ProviderKind};
use agent6g_core::sc_case::{CaseConstraints, DEFAULT_SNR_DB};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfigFile {
    pub base_dir: PathBuf,
    pub provider: ProviderConfig,
    pub run: RunConfig,
    pub planners: Vec<PlannerSetup>,
    pub judge: bool,
    pub mdr_enabled: bool,
    pub mdr: MdrConfig,
    pub kb_path: Option<PathBuf>,
    pub docs: Vec<PathBuf>,
    pub chunk_size: usize,
    pub overlap: usize,
    pub embed_dim: usize,
    pub task: TaskSpec,
    pub corpus: Option<PathBuf>,
    pub snr_db: f64,
    pub sc_seed: Option<u64>,
    pub sandbox_root: Option<PathBuf>,
    pub transcript_path: PathBuf,
    pub report_path: PathBuf,
}

impl RunConfigFile {
    /// Constraints for the `sc_evaluate` tool, taken from the task.
    pub fn case_constraints(&self) -> CaseConstraints {
        let mut c = CaseConstraints::default();
        if self.task.metric_name == "bleu" {
            c.min_bleu = self.task.metric_target;
        }
        if let Some(p) = self.task.constraints.iter().find(|c| c.name == "params") {
            c.max_params = p.bound as u64;
        }
        c
    }
}

/// Planner ids are `planner-a`, `planner-b`, ...
pub fn planner_id(index: usize) -> String {
    format!("planner-{}", (b'a' + (index % 26) as u8) as char)
}

fn default_planner(index: usize) -> (Strategy, String) {
    if index.is_multiple_of(2) {
        (Strategy::Cot, "favours incremental parameter tuning".into())
    } else {
        (Strategy::PlanAndSolve, "favours structural exploration".into())
    }
}

struct Line<'a> {
    no: usize,
    value: &'a str,
}

fn err(line: usize, message: impl Into<String>) -> CliError {
    CliError::Config { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(l: &Line<'_>, key: &str) -> Result<T, CliError> {
    l.value.parse().map_err(|_| err(l.no, format!("{key}: cannot parse {:?}", l.value)))
}

fn parse_bool(l: &Line<'_>, key: &str) -> Result<bool, CliError> {
    match l.value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(err(l.no, format!("{key}: expected true or false, got {other:?}"))),
    }
}

fn parse_direction(no: usize, text: &str) -> Result<Direction, CliError> {
    match text {
        ">=" => Ok(Direction::AtLeast),
        "<=" => Ok(Direction::AtMost),
        other => Err(err(no, format!("direction must be >= or <=, got {other:?}"))),
    }
}

fn parse_strategy(l: &Line<'_>) -> Result<Strategy, CliError> {
    match l.value {
        "cot" => Ok(Strategy::Cot),
        "plan_and_solve" => Ok(Strategy::PlanAndSolve),
        other => Err(err(l.no, format!("strategy must be cot or plan_and_solve, got {other:?}"))),
    }
}

pub fn load(path: &Path) -> Result<RunConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    parse(&text, &base, &stem)
}

/// Parse config text; `base_dir` anchors relative paths and `stem` names
/// default output files.
pub fn parse(text: &str, base_dir: &Path, stem: &str) -> Result<RunConfigFile, CliError> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, "expected key = value"))?;
        let k = k.trim().to_string();
        if entries.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(err(i + 1, format!("duplicate key {k}")));
        }
    }
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let mut provider_kind = ProviderKind::Scripted;
    let mut script_path: Option<(usize, PathBuf)> = None;
    let mut endpoint = None;
    let mut model = None;
    let mut api_key_env = None;
    let mut timeout = None;
    let mut max_retries = None;
    let mut run = RunConfig::default();
    let mut agents: BTreeMap<String, (Option<Strategy>, Option<String>, usize)> = BTreeMap::new();
    let mut judge = false;
    let mut mdr_enabled = true;
    let mut mdr = MdrConfig::default();
    let mut kb_path = None;
    let mut docs = Vec::new();
    let mut chunk_size = DEFAULT_CHUNK_SIZE;
    let mut overlap = DEFAULT_OVERLAP;
    let mut embed_dim = DEFAULT_DIM;
    let mut objective = None;
    let mut metric_name = "bleu".to_string();
    let mut metric_target = 0.6;
    let mut metric_direction = Direction::AtLeast;
    let mut constraints = Vec::new();
    let mut corpus = None;
    let mut snr_db = DEFAULT_SNR_DB;
    let mut sc_seed = None;
    let mut sandbox_root = None;
    let mut transcript_path = base_dir.join(format!("{stem}.transcript.jsonl"));
    let mut report_path = base_dir.join(format!("{stem}.report.json"));

    for (key, (no, value)) in &entries {
        let l = Line { no: *no, value };
        match key.as_str() {
            "provider.kind" => {
                provider_kind = match value.as_str() {
                    "scripted" => ProviderKind::Scripted,
                    "http" => ProviderKind::Http,
                    other => return Err(err(l.no, format!("provider.kind must be scripted or http, got {other:?}"))),
                }
            }
            "provider.script" => script_path = Some((l.no, resolve(value))),
            "provider.endpoint" => endpoint = Some(value.clone()),
            "provider.model" => model = Some(value.clone()),
            "provider.api_key_env" => api_key_env = Some(value.clone()),
            "provider.timeout_s" => timeout = Some(Duration::from_secs(parse_num(&l, key)?)),
            "provider.max_retries" => max_retries = Some(parse_num(&l, key)?),
            "run.planners" => run.planner_count = parse_num(&l, key)?,
            "run.iterations" => run.iterations = parse_num(&l, key)?,
            "run.score_threshold" => run.score_threshold = parse_num(&l, key)?,
            "run.tau" => run.tau = parse_num(&l, key)?,
            "run.seed" => run.seed = parse_num(&l, key)?,
            "run.k_reflect" => run.k_reflect = parse_num(&l, key)?,
            "run.m_refine" => run.m_refine = parse_num(&l, key)?,
            "run.tool_budget" => run.tool_budget = parse_num(&l, key)?,
            "run.weight.quality" => run.weights.quality = parse_num(&l, key)?,
            "run.weight.objective" => run.weights.objective = parse_num(&l, key)?,
            "run.weight.violation" => run.weights.violation = parse_num(&l, key)?,
            "run.judge" => judge = parse_bool(&l, key)?,
            "mdr.enabled" => mdr_enabled = parse_bool(&l, key)?,
            "mdr.k" => mdr.k = parse_num(&l, key)?,
            "mdr.lambda" => mdr.lambda = parse_num(&l, key)?,
            "mdr.deny_list" => {
                mdr.deny_list = DenyList::load(&resolve(value)).map_err(|e| err(l.no, format!("mdr.deny_list: {e}")))?
            }
            "mdr.kb" => kb_path = Some(resolve(value)),
            "mdr.docs" => docs = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(resolve).collect(),
            "mdr.chunk_size" => chunk_size = parse_num(&l, key)?,
            "mdr.overlap" => overlap = parse_num(&l, key)?,
            "mdr.embed_dim" => embed_dim = parse_num(&l, key)?,
            "task.objective" => objective = Some(value.clone()),
            "task.metric" => metric_name = value.clone(),
            "task.target" => metric_target = parse_num(&l, key)?,
            "task.direction" => metric_direction = parse_direction(l.no, value)?,
            "sc.corpus" => corpus = Some(resolve(value)),
            "sc.snr_db" => snr_db = parse_num(&l, key)?,
            "sc.seed" => sc_seed = Some(parse_num(&l, key)?),
            "sandbox.root" => sandbox_root = Some(resolve(value)),
            "output.transcript" => transcript_path = resolve(value),
            "output.report" => report_path = resolve(value),
            other => {
                if let Some(name) = other.strip_prefix("task.constraint.") {
                    let (dir, bound) = value
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| err(l.no, format!("{other}: expected '<= bound' or '>= bound'")))?;
                    let bound: f64 =
                        bound.trim().parse().map_err(|_| err(l.no, format!("{other}: cannot parse bound {bound:?}")))?;
                    constraints.push(Constraint { name: name.to_string(), bound, direction: parse_direction(l.no, dir)? });
                } else if let Some((id, field)) = other.strip_prefix("agent.").and_then(|r| r.rsplit_once('.')) {
                    let slot = agents.entry(id.to_string()).or_insert((None, None, l.no));
                    match field {
                        "strategy" => slot.0 = Some(parse_strategy(&l)?),
                        "persona" => slot.1 = Some(value.clone()),
                        _ => return Err(err(l.no, format!("unknown config key {other}"))),
                    }
                } else {
                    return Err(err(l.no, format!("unknown config key {other}")));
                }
            }
        }
    }

    let mut provider = match provider_kind {
        ProviderKind::Scripted => {
            let (no, path) = script_path.ok_or_else(|| err(0, "provider.script is required for the scripted provider"))?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            ProviderConfig::scripted(parse_script(&text).map_err(|e| err(no, e.to_string()))?)
        }
        ProviderKind::Http => ProviderConfig::http(
            endpoint.ok_or_else(|| err(0, "provider.endpoint is required for the http provider"))?,
            model.ok_or_else(|| err(0, "provider.model is required for the http provider"))?,
        ),
    };
    if let Some(v) = api_key_env {
        provider.api_key_env = v;
    }
    if let Some(t) = timeout {
        provider.timeout = t;
    }
    if let Some(r) = max_retries {
        provider.max_retries = r;
    }
    provider.validate().map_err(|e| err(0, e.to_string()))?;

    let planners: Vec<PlannerSetup> = (0..run.planner_count)
        .map(|i| {
            let id = planner_id(i);
            let (mut strategy, mut persona) = default_planner(i);
            if let Some((s, p, _)) = agents.remove(&id) {
                strategy = s.unwrap_or(strategy);
                persona = p.unwrap_or(persona);
            }
            PlannerSetup { profile: AgentProfile::planner(&id, &persona), strategy }
        })
        .collect();
    if let Some((id, (_, _, no))) = agents.into_iter().next() {
        return Err(err(no, format!("agent.{id} does not name a configured planner")));
    }

    let task = TaskSpec {
        objective: objective.ok_or_else(|| err(0, "task.objective is required"))?,
        metric_name,
        metric_target,
        metric_direction,
        constraints,
        context: Default::default(),
    };
    task.validate().map_err(|e| err(0, e.to_string()))?;
    run.validate().map_err(|e| err(0, e.to_string()))?;
    if mdr_enabled && kb_path.is_none() && docs.is_empty() {
        return Err(err(0, "mdr.enabled requires mdr.kb or mdr.docs"));
    }

    Ok(RunConfigFile {
        base_dir: base_dir.to_path_buf(),
        provider,
        run,
        planners,
        judge,
        mdr_enabled,
        mdr,
        kb_path,
        docs,
        chunk_size,
        overlap,
        embed_dim,
        task,
        corpus,
        snr_db,
        sc_seed,
        sandbox_root,
        transcript_path,
        report_path,
    })
}
