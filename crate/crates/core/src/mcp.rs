//! Collaborative planning: planners turn the task into sub-task chains,
//! chains are validated as DAGs and executed against registered tools.
//!
//! Planner replies carry a fenced plan document:
//!
//! ```text
//! {"steps": [{"id", "description", "tool", "inputs", "produces"}],
//!  "deps": [["a", "b"]]}
//! ```
//!
//! A string input of the form `"$key"` is replaced by the artifact stored
//! under `key` before the tool runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mdr::DomainKnowledge;
use crate::mer::Feedback;
use crate::provider::{ask, AgentProfile, Provider, ProviderError};

pub const DEFAULT_TOOL_BUDGET: usize = 64;

#[derive(Debug, Error)]
pub enum McpError {
    #[error("plan parse error at byte {offset}: {message}")]
    PlanParse { offset: usize, message: String },
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("edge endpoint {0} is not a sub-task")]
    UnknownEdgeEndpoint(String),
    #[error("duplicate sub-task id {0}")]
    DuplicateId(String),
    #[error("artifact key {0} produced by more than one sub-task")]
    DuplicateProduces(String),
    #[error("chain has no sub-tasks")]
    EmptyChain,
    #[error("tool {0} already registered")]
    DuplicateTool(String),
    #[error("tool {0} not found")]
    NotFound(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

impl Direction {
    pub fn satisfied(&self, value: f64, bound: f64) -> bool {
        match self {
            Direction::AtLeast => value >= bound,
            Direction::AtMost => value <= bound,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AtLeast => ">=",
            Direction::AtMost => "<=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub bound: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub objective: String,
    pub metric_name: String,
    pub metric_target: f64,
    pub metric_direction: Direction,
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub context: DomainKnowledge,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), McpError> {
        if self.metric_name.trim().is_empty() {
            return Err(McpError::InvalidTask("metric_name is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.constraints {
            if !seen.insert(c.name.as_str()) {
                return Err(McpError::InvalidTask(format!("duplicate constraint {}", c.name)));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cot,
    PlanAndSolve,
}

impl Strategy {
    pub fn template(&self) -> &'static str {
        match self {
            Strategy::Cot => "Think step by step, emit steps.",
            Strategy::PlanAndSolve => "First devise a plan, then detail each step.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, Value>,
    #[serde(default)]
    pub produces: Vec<String>,
}

impl SubTask {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Self { id: id.into(), description: description.into(), tool: None, inputs: BTreeMap::new(), produces: Vec::new() }
    }

    pub fn with_tool(mut self, tool: impl Into<String>) -> Self {
        self.tool = Some(tool.into());
        self
    }

    pub fn with_input(mut self, key: impl Into<String>, value: Value) -> Self {
        self.inputs.insert(key.into(), value);
        self
    }

    pub fn producing(mut self, key: impl Into<String>) -> Self {
        self.produces.push(key.into());
        self
    }

    /// Artifact key for a tool-less sub-task's note.
    pub fn note_key(&self) -> String {
        format!("note:{}", self.id)
    }
}

/// A validated sub-task DAG with a cached topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTaskChain {
    pub planner_id: String,
    pub strategy: Strategy,
    pub subtasks: Vec<SubTask>,
    pub edges: Vec<(String, String)>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    steps: Vec<SubTask>,
    #[serde(default)]
    deps: Vec<(String, String)>,
}

/// Validate ids, endpoints and acyclicity; compute the topological order
/// with lexicographic tie-break.
pub fn build_chain(
    planner_id: &str,
    strategy: Strategy,
    subtasks: Vec<SubTask>,
    edges: Vec<(String, String)>,
) -> Result<SubTaskChain, McpError> {
    if subtasks.is_empty() {
        return Err(McpError::EmptyChain);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, t) in subtasks.iter().enumerate() {
        if index.insert(t.id.as_str(), i).is_some() {
            return Err(McpError::DuplicateId(t.id.clone()));
        }
    }
    let mut produced = BTreeSet::new();
    for key in subtasks.iter().flat_map(|t| &t.produces) {
        if !produced.insert(key.as_str()) {
            return Err(McpError::DuplicateProduces(key.clone()));
        }
    }
    let mut succ: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); subtasks.len()];
    for (from, to) in &edges {
        let f = *index.get(from.as_str()).ok_or_else(|| McpError::UnknownEdgeEndpoint(from.clone()))?;
        if !index.contains_key(to.as_str()) {
            return Err(McpError::UnknownEdgeEndpoint(to.clone()));
        }
        succ[f].insert(to.as_str());
    }
    if let Some(cycle) = find_cycle(&subtasks, &index, &succ) {
        return Err(McpError::CycleDetected(cycle));
    }

    let mut indegree = vec![0usize; subtasks.len()];
    for targets in &succ {
        for t in targets {
            indegree[index[t]] += 1;
        }
    }
    let mut ready: BTreeSet<&str> =
        subtasks.iter().enumerate().filter(|(i, _)| indegree[*i] == 0).map(|(_, t)| t.id.as_str()).collect();
    let mut order = Vec::with_capacity(subtasks.len());
    while let Some(id) = ready.pop_first() {
        let i = index[id];
        order.push(i);
        for t in &succ[i] {
            let j = index[t];
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(t);
            }
        }
    }
    debug_assert_eq!(order.len(), subtasks.len());
    Ok(SubTaskChain { planner_id: planner_id.to_string(), strategy, subtasks, edges, order })
}

/// Depth-first search in lexicographic order; returns `[v, ..., v]`.
fn find_cycle(subtasks: &[SubTask], index: &HashMap<&str, usize>, succ: &[BTreeSet<&str>]) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    fn visit(
        u: usize,
        subtasks: &[SubTask],
        index: &HashMap<&str, usize>,
        succ: &[BTreeSet<&str>],
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        marks[u] = Mark::Grey;
        stack.push(u);
        for t in &succ[u] {
            let v = index[t];
            match marks[v] {
                Mark::Grey => {
                    let pos = stack.iter().position(|&s| s == v).expect("grey node is on the stack");
                    let mut cycle: Vec<String> = stack[pos..].iter().map(|&s| subtasks[s].id.clone()).collect();
                    cycle.push(subtasks[v].id.clone());
                    return Some(cycle);
                }
                Mark::White => {
                    if let Some(c) = visit(v, subtasks, index, succ, marks, stack) {
                        return Some(c);
                    }
                }
                Mark::Black => {}
            }
        }
        stack.pop();
        marks[u] = Mark::Black;
        None
    }

    let mut marks = vec![Mark::White; subtasks.len()];
    let mut ids: Vec<&str> = subtasks.iter().map(|t| t.id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        let u = index[id];
        if marks[u] == Mark::White {
            if let Some(c) = visit(u, subtasks, index, succ, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

impl SubTaskChain {
    pub fn topo_order(&self) -> impl Iterator<Item = &SubTask> {
        self.order.iter().map(|&i| &self.subtasks[i])
    }

    pub fn topo_ids(&self) -> Vec<&str> {
        self.topo_order().map(|t| t.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SubTask> {
        self.subtasks.iter().find(|t| t.id == id)
    }

    fn doc(&self) -> PlanDoc {
        PlanDoc { steps: self.subtasks.clone(), deps: self.edges.clone() }
    }

    /// One line per sub-task in topological order, then one per edge:
    /// `id (tool): description {inputs} => produces` and `from -> to`.
    /// This is the text memory embeds; it leaves out the plan document's
    /// repeated field names, which would dominate a trigram embedding.
    pub fn canonical_text(&self) -> String {
        let mut lines: Vec<String> = self
            .topo_order()
            .map(|t| {
                let mut line = t.id.clone();
                if let Some(tool) = &t.tool {
                    line.push_str(&format!(" ({tool})"));
                }
                line.push_str(&format!(": {}", t.description));
                if !t.inputs.is_empty() {
                    line.push_str(&format!(" {}", serde_json::to_string(&t.inputs).expect("inputs serialize")));
                }
                if !t.produces.is_empty() {
                    line.push_str(&format!(" => {}", t.produces.join(", ")));
                }
                line
            })
            .collect();
        let mut edges: Vec<String> = self.edges.iter().map(|(a, b)| format!("{a} -> {b}")).collect();
        edges.sort();
        lines.extend(edges);
        lines.join("\n")
    }

    /// Fenced plan document, parseable by [`parse_plan`].
    pub fn render(&self) -> String {
        format!("```json\n{}\n```", serde_json::to_string_pretty(&self.doc()).expect("plan document serializes"))
    }

    /// Dependency depth of each sub-task, used to group independent work.
    fn levels(&self) -> Vec<usize> {
        let pos: HashMap<&str, usize> = self.subtasks.iter().enumerate().map(|(i, t)| (t.id.as_str(), i)).collect();
        let mut level = vec![0usize; self.subtasks.len()];
        for &i in &self.order {
            for (from, to) in &self.edges {
                if pos[to.as_str()] == i {
                    level[i] = level[i].max(level[pos[from.as_str()]] + 1);
                }
            }
        }
        level
    }
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Extract the first fenced block from a planner reply and parse it.
pub fn parse_plan(reply: &str, planner_id: &str, strategy: Strategy) -> Result<SubTaskChain, McpError> {
    let open = reply.find("```").ok_or(McpError::PlanParse { offset: 0, message: "no fenced block".into() })?;
    let after_fence = open + 3;
    let body_start = match reply[after_fence..].find('\n') {
        Some(nl) => after_fence + nl + 1,
        None => return Err(McpError::PlanParse { offset: open, message: "unterminated fenced block".into() }),
    };
    let close = reply[body_start..]
        .find("```")
        .map(|c| body_start + c)
        .ok_or(McpError::PlanParse { offset: open, message: "unterminated fenced block".into() })?;
    let body = &reply[body_start..close];
    let doc: PlanDoc = serde_json::from_str(body).map_err(|e| McpError::PlanParse {
        offset: body_start + line_col_to_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    build_chain(planner_id, strategy, doc.steps, doc.deps)
}

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

pub type ToolInputs = BTreeMap<String, Value>;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ToolError(pub String);

pub trait Tool: Send + Sync {
    fn call(&self, inputs: &ToolInputs) -> Result<Value, ToolError>;
}

impl<F> Tool for F
where
    F: Fn(&ToolInputs) -> Result<Value, ToolError> + Send + Sync,
{
    fn call(&self, inputs: &ToolInputs) -> Result<Value, ToolError> {
        self(inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: BTreeMap<String, String>,
    pub deterministic: bool,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, deterministic: bool) -> Self {
        Self { name: name.into(), description: description.into(), input_schema: BTreeMap::new(), deterministic }
    }

    pub fn with_schema(mut self, schema: BTreeMap<String, String>) -> Self {
        self.input_schema = schema;
        self
    }
}

#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolSpec, Arc<dyn Tool>)>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ToolSpec, tool: impl Tool + 'static) -> Result<(), McpError> {
        if self.tools.contains_key(&spec.name) {
            return Err(McpError::DuplicateTool(spec.name));
        }
        self.tools.insert(spec.name.clone(), (spec, Arc::new(tool)));
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<&ToolSpec, McpError> {
        self.tools.get(name).map(|(s, _)| s).ok_or_else(|| McpError::NotFound(name.to_string()))
    }

    fn callable(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// One line per tool: `name(key: type, ...) - description`.
    pub fn catalog(&self) -> String {
        self.tools
            .values()
            .map(|(s, _)| {
                let args = s.input_schema.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ");
                format!("{}({}) - {}", s.name, args, s.description)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

/// Who is planning and when; rendered into the prompt header.
#[derive(Debug, Clone)]
pub struct PlanContext<'a> {
    pub planner_id: &'a str,
    pub iteration: usize,
    pub registry: Option<&'a ToolRegistry>,
}

/// Prompt header identifying the planner and iteration, e.g. `[planner-a | iteration 2]`.
pub fn prompt_header(planner_id: &str, iteration: usize) -> String {
    format!("[{planner_id} | iteration {iteration}]")
}

pub fn plan_sections(task: &TaskSpec, feedback: &[Feedback], ctx: &PlanContext<'_>) -> Vec<(String, String)> {
    let mut sections = vec![
        ("Objective".to_string(), task.objective.clone()),
        (
            "Metric".to_string(),
            format!("{} {} {}", task.metric_name, task.metric_direction, task.metric_target),
        ),
    ];
    if !task.constraints.is_empty() {
        let lines = task
            .constraints
            .iter()
            .map(|c| format!("{} {} {}", c.name, c.direction, c.bound))
            .collect::<Vec<_>>()
            .join("\n");
        sections.push(("Constraints".to_string(), lines));
    }
    if !task.context.summary.is_empty() {
        sections.push(("Domain knowledge".to_string(), task.context.summary.clone()));
    }
    if let Some(reg) = ctx.registry {
        sections.push(("Tools".to_string(), reg.catalog()));
    }
    let suggestions: Vec<String> = feedback
        .iter()
        .flat_map(|f| f.suggestions.iter().map(move |s| format!("({}) {s}", f.scope_label())))
        .collect();
    if !suggestions.is_empty() {
        sections.push(("Feedback".to_string(), suggestions.join("\n")));
    }
    sections
}

/// One planner call; the reply must hold a fenced plan document.
pub fn plan(
    task: &TaskSpec,
    profile: &AgentProfile,
    strategy: Strategy,
    feedback: &[Feedback],
    provider: &dyn Provider,
    ctx: &PlanContext<'_>,
) -> Result<SubTaskChain, McpError> {
    task.validate()?;
    let sections = plan_sections(task, feedback, ctx);
    let message = format!(
        "{} {} Reply with one fenced json block {{\"steps\": [...], \"deps\": [...]}}.",
        prompt_header(ctx.planner_id, ctx.iteration),
        strategy.template()
    );
    let reply = ask(profile, &sections, &message, provider)?;
    parse_plan(&reply, ctx.planner_id, strategy)
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExecError {
    #[error("sub-task {subtask}: unknown tool {tool}")]
    UnknownTool { subtask: String, tool: String },
    #[error("sub-task {subtask}: input reference ${key} is unresolved")]
    InputUnresolved { subtask: String, key: String },
    #[error("sub-task {subtask}: tool failed: {message}")]
    ToolFailure { subtask: String, message: String },
    #[error("tool-call budget of {budget} exceeded at sub-task {subtask}")]
    BudgetExceeded { subtask: String, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecEventKind {
    Start,
    End,
    Fail,
}

/// One execution log line. `seq` is a logical clock: every start of a
/// sub-task follows the end of all its dependencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecEvent {
    pub seq: u64,
    pub subtask: String,
    pub kind: ExecEventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub planner_id: String,
    pub iteration: usize,
    pub artifacts: BTreeMap<String, Value>,
    pub logs: Vec<ExecEvent>,
    pub succeeded: bool,
    pub error: Option<ExecError>,
    pub tool_calls: usize,
    /// Declared `produces` keys of the chain, for structural scoring.
    pub declared: Vec<String>,
}

impl ChainResult {
    pub fn produced_fraction(&self) -> f64 {
        if self.declared.is_empty() {
            return if self.succeeded { 1.0 } else { 0.0 };
        }
        let present = self.declared.iter().filter(|k| self.artifacts.contains_key(*k)).count();
        present as f64 / self.declared.len() as f64
    }
}

fn resolve(value: &Value, artifacts: &BTreeMap<String, Value>, subtask: &str) -> Result<Value, ExecError> {
    match value {
        Value::String(s) if s.starts_with('$') && s.len() > 1 => {
            let key = &s[1..];
            artifacts
                .get(key)
                .cloned()
                .ok_or_else(|| ExecError::InputUnresolved { subtask: subtask.to_string(), key: key.to_string() })
        }
        Value::Array(items) => items.iter().map(|v| resolve(v, artifacts, subtask)).collect::<Result<_, _>>().map(Value::Array),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| Ok((k.clone(), resolve(v, artifacts, subtask)?)))
            .collect::<Result<serde_json::Map<_, _>, _>>()
            .map(Value::Object),
        other => Ok(other.clone()),
    }
}

fn store_outputs(task: &SubTask, output: Value, artifacts: &mut BTreeMap<String, Value>) -> Result<(), ExecError> {
    match task.produces.as_slice() {
        [] => Ok(()),
        [key] => {
            artifacts.insert(key.clone(), output);
            Ok(())
        }
        keys => {
            let obj = output.as_object().ok_or_else(|| ExecError::ToolFailure {
                subtask: task.id.clone(),
                message: "tool output must be an object when several keys are produced".into(),
            })?;
            for key in keys {
                let v = obj.get(key).ok_or_else(|| ExecError::ToolFailure {
                    subtask: task.id.clone(),
                    message: format!("tool output lacks produced key {key}"),
                })?;
                artifacts.insert(key.clone(), v.clone());
            }
            Ok(())
        }
    }
}

/// Run a chain. Sub-tasks at the same dependency depth run concurrently;
/// logs and artifacts are recorded in topological order so results do
/// not depend on scheduling. Execution stops at the first failure.
pub fn execute_chain(chain: &SubTaskChain, registry: &ToolRegistry, budget: usize, iteration: usize) -> ChainResult {
    let mut result = ChainResult {
        planner_id: chain.planner_id.clone(),
        iteration,
        artifacts: BTreeMap::new(),
        logs: Vec::new(),
        succeeded: false,
        error: None,
        tool_calls: 0,
        declared: chain.subtasks.iter().flat_map(|t| t.produces.iter().cloned()).collect(),
    };
    let mut seq = 0u64;
    let mut log = |logs: &mut Vec<ExecEvent>, subtask: &str, kind: ExecEventKind, detail: String| {
        logs.push(ExecEvent { seq, subtask: subtask.to_string(), kind, detail });
        seq += 1;
    };

    for t in chain.topo_order() {
        if let Some(tool) = &t.tool {
            if registry.callable(tool).is_none() {
                result.error = Some(ExecError::UnknownTool { subtask: t.id.clone(), tool: tool.clone() });
                return result;
            }
        }
    }

    let levels = chain.levels();
    let depth = levels.iter().copied().max().unwrap_or(0);
    for level in 0..=depth {
        let wave: Vec<&SubTask> = chain.order.iter().filter(|&&i| levels[i] == level).map(|&i| &chain.subtasks[i]).collect();

        // Resolve inputs and claim budget in order; the first problem ends the wave early.
        let mut runnable: Vec<(&SubTask, ToolInputs)> = Vec::new();
        let mut failure: Option<ExecError> = None;
        for t in &wave {
            let inputs: Result<ToolInputs, ExecError> =
                t.inputs.iter().map(|(k, v)| Ok((k.clone(), resolve(v, &result.artifacts, &t.id)?))).collect();
            let inputs = match inputs {
                Ok(i) => i,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            if t.tool.is_some() {
                if result.tool_calls >= budget {
                    failure = Some(ExecError::BudgetExceeded { subtask: t.id.clone(), budget });
                    break;
                }
                result.tool_calls += 1;
            }
            runnable.push((t, inputs));
        }

        for (t, _) in &runnable {
            log(&mut result.logs, &t.id, ExecEventKind::Start, t.tool.clone().unwrap_or_else(|| "note".into()));
        }
        let outputs: Vec<Result<Value, ToolError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = runnable
                .iter()
                .map(|(t, inputs)| {
                    let tool = t.tool.as_deref().and_then(|name| registry.callable(name)).cloned();
                    scope.spawn(move || match tool {
                        Some(tool) => tool.call(inputs),
                        None => Ok(Value::String(t.description.clone())),
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(ToolError("tool panicked".into())))).collect()
        });

        for ((t, _), output) in runnable.iter().zip(outputs) {
            let stored = match output {
                Ok(v) if t.tool.is_none() => {
                    for key in &t.produces {
                        result.artifacts.insert(key.clone(), v.clone());
                    }
                    result.artifacts.insert(t.note_key(), v);
                    Ok(())
                }
                Ok(v) => store_outputs(t, v, &mut result.artifacts),
                Err(e) => Err(ExecError::ToolFailure { subtask: t.id.clone(), message: e.0 }),
            };
            match stored {
                Ok(()) => log(&mut result.logs, &t.id, ExecEventKind::End, String::new()),
                Err(e) => {
                    log(&mut result.logs, &t.id, ExecEventKind::Fail, e.to_string());
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(e) = failure {
            if !result.logs.iter().any(|l| l.kind == ExecEventKind::Fail) {
                let subtask = match &e {
                    ExecError::InputUnresolved { subtask, .. }
                    | ExecError::BudgetExceeded { subtask, .. }
                    | ExecError::ToolFailure { subtask, .. }
                    | ExecError::UnknownTool { subtask, .. } => subtask.clone(),
                };
                log(&mut result.logs, &subtask, ExecEventKind::Fail, e.to_string());
            }
            result.error = Some(e);
            return result;
        }
    }
    result.succeeded = true;
    result
}
