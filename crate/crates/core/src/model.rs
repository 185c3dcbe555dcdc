//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is a plain value object: cheap to clone, `Send + Sync`,
//! and serializable to the canonical JSON form in [`crate::canonical`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// Machine-readable protocol for one tool.
///
/// `url_template` is a path relative to the tool service base URL and may
/// carry `{param}` placeholders. Parameters that do not appear in the
/// template travel in the query string (GET) or the JSON body (POST).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDoc {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub category: String,
    pub http_method: HttpMethod,
    pub url_template: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
}

impl ToolDoc {
    /// Placeholder names in `url_template`, in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.url_template.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    out.push(&after[..close]);
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// One pattern an acceptable answer has to contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    pub pattern: String,
    #[serde(default)]
    pub regex: bool,
    #[serde(default = "default_true")]
    pub case_insensitive: bool,
}

fn default_true() -> bool {
    true
}

impl Matcher {
    pub fn substring(pattern: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            regex: false,
            case_insensitive: true,
        }
    }

    pub fn regex(pattern: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            regex: true,
            case_insensitive: true,
        }
    }
}

/// Matcher spec consumed by the rule-based judge.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerOracle {
    pub required: Vec<Matcher>,
}

impl AnswerOracle {
    pub fn requiring<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            required: patterns.into_iter().map(Matcher::substring).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    pub toolset: Vec<ToolDoc>,
    #[serde(default)]
    pub oracle: Option<AnswerOracle>,
    pub max_depth: u32,
}

impl Task {
    pub fn tool(&self, name: &str) -> Option<&ToolDoc> {
        self.toolset.iter().find(|t| t.name == name)
    }
}

/// Every Task and ToolDoc invariant that does not hold, as readable text.
pub fn validate_task(task: &Task) -> Vec<String> {
    let mut violations = Vec::new();
    if task.toolset.is_empty() {
        violations.push("empty toolset".to_string());
    }
    if task.max_depth < 1 {
        violations.push("max_depth must be at least 1".to_string());
    }
    let mut seen = BTreeSet::new();
    for tool in &task.toolset {
        if !seen.insert(tool.name.as_str()) {
            violations.push(format!("duplicate tool name: {}", tool.name));
        }
        let mut params = BTreeSet::new();
        for p in &tool.params {
            if !params.insert(p.name.as_str()) {
                violations.push(format!("duplicate param {} in tool {}", p.name, tool.name));
            }
        }
        for ph in tool.placeholders() {
            if tool.param(ph).is_none() {
                violations.push(format!("unbound placeholder: {ph}"));
            }
        }
    }
    violations
}

/// One generated program and the text it was parsed from.
///
/// A candidate whose model output held no code block is kept as a
/// placeholder with empty `code`; it is never executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStep {
    pub step_index: u32,
    pub thought: String,
    pub code: String,
    pub raw_model_output: String,
    pub token_count: u64,
}

impl CodeStep {
    pub fn is_placeholder(&self) -> bool {
        self.code.is_empty()
    }
}

/// Whitespace-separated unit count, used when a backend reports no usage.
pub fn whitespace_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    RuntimeError,
    Timeout,
    ProtocolError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Success => "success",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::ProtocolError => "protocol_error",
        }
    }
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_ms: u64,
    /// Request hashes of every tool call made while executing.
    #[serde(default)]
    pub tool_calls: Vec<String>,
}

impl ExecutionResult {
    pub fn protocol_error(detail: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::ProtocolError,
            stdout: String::new(),
            stderr: detail.into(),
            wall_time_ms: 0,
            tool_calls: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMethod {
    Prm,
    Rollout,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub delta_correct: u32,
    pub delta_total: u32,
    pub tau: f64,
    pub raw_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEstimate {
    pub value: f64,
    pub method: LatentMethod,
    #[serde(default)]
    pub rollout_stats: Option<RolloutStats>,
}

impl LatentEstimate {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            method: LatentMethod::Constant,
            rollout_stats: None,
        }
    }

    pub fn prm(value: f64) -> Self {
        Self {
            value,
            method: LatentMethod::Prm,
            rollout_stats: None,
        }
    }
}

/// On-the-spot reward, latent estimate and their sum.
///
/// Build through [`RewardBundle::new`] so `r_total` is always the exact sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_spot: u8,
    pub latent: LatentEstimate,
    pub r_total: f64,
}

impl RewardBundle {
    pub fn new(r_spot: u8, latent: LatentEstimate) -> Self {
        let r_total = crate::reward::cumulative(r_spot, latent.value);
        Self {
            r_spot,
            latent,
            r_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub step: CodeStep,
    pub exec: ExecutionResult,
    pub rewards: RewardBundle,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub candidates: Vec<CandidateRecord>,
    pub selected_index: usize,
}

impl StepRecord {
    pub fn selected(&self) -> &CandidateRecord {
        &self.candidates[self.selected_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerStatus {
    Solved,
    Unsure,
    Unsolved,
}

impl AnswerStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerStatus::Solved => "Solved",
            AnswerStatus::Unsure => "Unsure",
            AnswerStatus::Unsolved => "Unsolved",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().trim_matches('"').to_ascii_lowercase().as_str() {
            "solved" => Some(AnswerStatus::Solved),
            "unsure" => Some(AnswerStatus::Unsure),
            "unsolved" => Some(AnswerStatus::Unsolved),
            _ => None,
        }
    }
}

impl fmt::Display for AnswerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fixed score mapping used by the pass-rate metric.
pub fn status_score(status: AnswerStatus) -> f64 {
    match status {
        AnswerStatus::Solved => 1.0,
        AnswerStatus::Unsure => 0.5,
        AnswerStatus::Unsolved => 0.0,
    }
}

/// Where a trajectory's final answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    #[default]
    Sentinel,
    Concatenated,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub final_answer: String,
    #[serde(default)]
    pub answer_source: AnswerSource,
    #[serde(default)]
    pub answer_status: Option<AnswerStatus>,
    pub depth: u32,
    pub total_tokens: u64,
    /// Set when the run aborted; the trajectory holds whatever was committed.
    #[serde(default)]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            steps: Vec::new(),
            final_answer: String::new(),
            answer_source: AnswerSource::Sentinel,
            answer_status: None,
            depth: 0,
            total_tokens: 0,
            error: None,
        }
    }

    /// Append a step and keep `depth` and `total_tokens` in sync.
    pub fn push_step(&mut self, record: StepRecord) {
        self.total_tokens += record.selected().step.token_count;
        self.steps.push(record);
        self.depth = self.steps.len() as u32;
    }

    pub fn selected_steps(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.steps.iter().map(StepRecord::selected)
    }

    /// Invariant violations, empty when the trajectory is well formed.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.depth as usize != self.steps.len() {
            problems.push(format!(
                "depth {} != step count {}",
                self.depth,
                self.steps.len()
            ));
        }
        let tokens: u64 = self.selected_steps().map(|c| c.step.token_count).sum();
        if tokens != self.total_tokens {
            problems.push(format!("total_tokens {} != {tokens}", self.total_tokens));
        }
        for (i, rec) in self.steps.iter().enumerate() {
            let expected_index = i as u32 + 1;
            if rec.candidates.is_empty() {
                problems.push(format!("step {expected_index} has no candidates"));
                continue;
            }
            let flagged: Vec<usize> = rec
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.selected)
                .map(|(j, _)| j)
                .collect();
            if flagged != [rec.selected_index] {
                problems.push(format!("step {expected_index}: selected flags {flagged:?}"));
            }
            if rec.selected_index < rec.candidates.len()
                && rec.selected().step.step_index != expected_index
            {
                problems.push(format!("step {expected_index}: non-contiguous step index"));
            }
            for c in &rec.candidates {
                let r = &c.rewards;
                if r.r_total != f64::from(r.r_spot) + r.latent.value {
                    problems.push(format!("step {expected_index}: r_total mismatch"));
                }
            }
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub big_l: f64,
    pub n_candidates: usize,
    pub n_rollouts: usize,
    pub max_depth: u32,
    pub exec_timeout_ms: u64,
    pub rng_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.9,
            big_l: 10.0,
            n_candidates: 3,
            n_rollouts: 4,
            max_depth: 8,
            exec_timeout_ms: 10_000,
            rng_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), CoreError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        let mut bad = Vec::new();
        if !unit(self.alpha) {
            bad.push(format!("alpha {} not in (0,1]", self.alpha));
        }
        if !unit(self.beta) {
            bad.push(format!("beta {} not in (0,1]", self.beta));
        }
        if !(self.big_l > 0.0 && self.big_l.is_finite()) {
            bad.push(format!("L {} must be positive", self.big_l));
        }
        if self.n_candidates < 1 {
            bad.push("n_candidates must be >= 1".into());
        }
        if self.n_rollouts < 1 {
            bad.push("n_rollouts must be >= 1".into());
        }
        if self.max_depth < 1 {
            bad.push("max_depth must be >= 1".into());
        }
        if self.exec_timeout_ms == 0 {
            bad.push("exec_timeout_ms must be > 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CoreError::InvalidConfig(bad.join("; ")))
        }
    }
}
