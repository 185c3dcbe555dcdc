//! Candidate generation: backends that turn a prompt into raw model texts,
//! and the parser that splits a text into thought and code.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::{prefix_hash, to_canonical_bytes};
use stepcode_core::chat::ChatClient;
use stepcode_core::{whitespace_token_count, CodeStep};
use thiserror::Error;

use crate::error::EngineError;
use crate::prompt::PromptBundle;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no fenced code block in model output")]
    NoCodeBlock,
    #[error("the first fenced code block is empty")]
    EmptyCodeBlock,
}

/// One raw sample from a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    /// Backend-reported completion tokens, when available.
    pub tokens: Option<u64>,
}

impl Generation {
    pub fn token_count(&self) -> u64 {
        self.tokens.unwrap_or_else(|| whitespace_token_count(&self.text))
    }
}

pub trait PolicyBackend: Send + Sync {
    /// Exactly `n` samples for `prompt`.
    fn generate(
        &self,
        prompt: &PromptBundle,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<Generation>, EngineError>;
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Split model output into thought (text before the first fence) and code
/// (contents of the first fenced block). An unterminated block runs to the
/// end of the text. Later blocks are ignored.
pub fn parse_step(raw: &str, step_index: u32) -> Result<CodeStep, ParseError> {
    let lines: Vec<&str> = raw.lines().collect();
    let open = lines.iter().position(|l| is_fence(l)).ok_or(ParseError::NoCodeBlock)?;
    let close = lines[open + 1..]
        .iter()
        .position(|l| is_fence(l))
        .map(|p| open + 1 + p)
        .unwrap_or(lines.len());
    let code = lines[open + 1..close].join("\n");
    if code.trim().is_empty() {
        return Err(ParseError::EmptyCodeBlock);
    }
    if lines[close.min(lines.len())..].iter().skip(1).any(|l| is_fence(l)) {
        tracing::warn!(step_index, "model output has more than one code block; using the first");
    }
    Ok(CodeStep {
        step_index,
        thought: lines[..open].join("\n").trim().to_string(),
        code,
        raw_model_output: raw.to_string(),
        token_count: whitespace_token_count(raw),
    })
}

/// Candidate that could not be parsed; kept so the candidate count stays
/// fixed. It is never executed.
pub fn placeholder_step(raw: &str, step_index: u32, token_count: u64) -> CodeStep {
    CodeStep {
        step_index,
        thought: String::new(),
        code: String::new(),
        raw_model_output: raw.to_string(),
        token_count,
    }
}

/// Draw `n` candidates and parse them. Unparseable samples become
/// placeholders; the result always has length `n`.
pub fn sample_candidates(
    backend: &dyn PolicyBackend,
    prompt: &PromptBundle,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<CodeStep>, EngineError> {
    if n == 0 {
        return Err(EngineError::Config("at least one candidate is required".into()));
    }
    let step_index = prompt.depth() as u32 + 1;
    let gens = backend.generate(prompt, n, temperature, seed)?;
    if gens.len() != n {
        return Err(EngineError::BackendUnreachable(format!(
            "backend returned {} samples, expected {n}",
            gens.len()
        )));
    }
    Ok(gens
        .iter()
        .map(|g| match parse_step(&g.text, step_index) {
            Ok(mut step) => {
                step.token_count = g.token_count();
                step
            }
            Err(e) => {
                tracing::debug!(step_index, error = %e, "unparseable candidate");
                placeholder_step(&g.text, step_index, g.token_count())
            }
        })
        .collect())
}

/// Scripted texts for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    /// Prefix hash to the ordered candidate texts offered after that prefix.
    #[serde(default)]
    pub by_prefix: BTreeMap<String, Vec<String>>,
    /// Offered after any prefix without its own entry.
    #[serde(default)]
    pub fallback: Vec<String>,
}

/// Scenario file of the scripted backend: task id, then prefix hash, to
/// the candidate texts in sample order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptBook {
    pub tasks: BTreeMap<String, TaskScript>,
}

/// Text returned when a prefix has neither an entry nor a fallback. It has
/// no code block, so it becomes a placeholder candidate.
pub const UNSCRIPTED_TEXT: &str = "No scripted continuation for this prefix.";

impl ScriptBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Offer `texts` after the committed code sequence `prefix`.
    pub fn insert<S: AsRef<str>>(&mut self, task_id: &str, prefix: &[S], texts: Vec<String>) {
        self.tasks
            .entry(task_id.to_string())
            .or_default()
            .by_prefix
            .insert(prefix_hash(prefix), texts);
    }

    pub fn set_fallback(&mut self, task_id: &str, texts: Vec<String>) {
        self.tasks.entry(task_id.to_string()).or_default().fallback = texts;
    }

    pub fn merge(&mut self, other: ScriptBook) {
        for (task, script) in other.tasks {
            let entry = self.tasks.entry(task).or_default();
            entry.by_prefix.extend(script.by_prefix);
            if !script.fallback.is_empty() {
                entry.fallback = script.fallback;
            }
        }
    }

    pub fn lookup(&self, task_id: &str, prefix_hash: &str) -> Option<&[String]> {
        let script = self.tasks.get(task_id)?;
        match script.by_prefix.get(prefix_hash) {
            Some(texts) if !texts.is_empty() => Some(texts),
            _ if !script.fallback.is_empty() => Some(&script.fallback),
            _ => None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, EngineError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        std::fs::write(path, to_canonical_bytes(self)?)?;
        Ok(())
    }
}

/// Deterministic backend replaying a [`ScriptBook`].
///
/// Sample `i` is text `i mod k` of the `k` texts scripted for the prompt's
/// (task, prefix hash); temperature and seed are ignored, so the output is a
/// pure function of (task, prefix, ordinal).
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    book: ScriptBook,
}

impl ScriptedPolicy {
    pub fn new(book: ScriptBook) -> Self {
        Self { book }
    }

    pub fn book(&self) -> &ScriptBook {
        &self.book
    }
}

impl PolicyBackend for ScriptedPolicy {
    fn generate(
        &self,
        prompt: &PromptBundle,
        n: usize,
        _temperature: f64,
        _seed: u64,
    ) -> Result<Vec<Generation>, EngineError> {
        let hash = prompt.prefix_hash();
        let texts = self.book.lookup(&prompt.task_id, &hash);
        if texts.is_none() {
            tracing::debug!(task = %prompt.task_id, prefix = %hash, "no scripted continuation");
        }
        Ok((0..n)
            .map(|i| Generation {
                text: texts.map_or(UNSCRIPTED_TEXT.to_string(), |t| t[i % t.len()].clone()),
                tokens: None,
            })
            .collect())
    }
}

/// Backend over a chat-completions endpoint; one request per sample with
/// seeds `seed, seed+1, ...`.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    client: ChatClient,
}

impl RemotePolicy {
    pub fn new(client: ChatClient) -> Self {
        Self { client }
    }
}

impl PolicyBackend for RemotePolicy {
    fn generate(
        &self,
        prompt: &PromptBundle,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<Generation>, EngineError> {
        let messages = prompt.to_messages();
        (0..n)
            .map(|i| {
                let c = self
                    .client
                    .complete(&messages, temperature, Some(seed.wrapping_add(i as u64)))?;
                Ok(Generation {
                    text: c.text,
                    tokens: c.completion_tokens,
                })
            })
            .collect()
    }
}
