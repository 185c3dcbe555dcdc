//! Answer judging and the solvable pass rate.

use std::collections::HashMap;
use std::sync::Mutex;

use regex::RegexBuilder;
use serde_json::Value;
use thiserror::Error;

use crate::chat::{ChatClient, ChatError, ChatMessage};
use crate::model::{status_score, AnswerOracle, AnswerStatus, Matcher, Task};

/// Version tag of the bundled judging prompt.
pub const JUDGE_PROMPT_VERSION: &str = "sopr_judge_v1";
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../prompts/sopr_judge_v1.txt");

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge backend unreachable: {0}")]
    Unreachable(#[from] ChatError),
    #[error("invalid oracle pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub status: AnswerStatus,
    pub rationale: String,
    /// Set when the verdict was not parsed from the backend and defaulted.
    pub flagged: bool,
}

pub trait JudgeBackend: Send + Sync {
    fn judge(&self, task: &Task, answer: &str) -> Result<Judgment, JudgeError>;
}

pub fn judge_answer(
    backend: &dyn JudgeBackend,
    task: &Task,
    answer: &str,
) -> Result<AnswerStatus, JudgeError> {
    backend.judge(task, answer).map(|j| j.status)
}

/// Rule-based judge over `Task::oracle`.
///
/// All required matchers present → Solved, some → Unsure, none or an empty
/// answer → Unsolved. Tasks without an oracle are judged Unsure and flagged.
#[derive(Debug, Default)]
pub struct MockJudge {
    compiled: Mutex<HashMap<(String, bool), regex::Regex>>,
}

impl MockJudge {
    pub fn new() -> Self {
        Self::default()
    }

    fn matches(&self, m: &Matcher, answer: &str) -> Result<bool, JudgeError> {
        if !m.regex {
            return Ok(if m.case_insensitive {
                answer.to_lowercase().contains(&m.pattern.to_lowercase())
            } else {
                answer.contains(&m.pattern)
            });
        }
        let key = (m.pattern.clone(), m.case_insensitive);
        let mut cache = self.compiled.lock().expect("regex cache poisoned");
        if !cache.contains_key(&key) {
            let re = RegexBuilder::new(&m.pattern)
                .case_insensitive(m.case_insensitive)
                .build()
                .map_err(|e| JudgeError::BadPattern {
                    pattern: m.pattern.clone(),
                    reason: e.to_string(),
                })?;
            cache.insert(key.clone(), re);
        }
        Ok(cache[&key].is_match(answer))
    }

    pub fn judge_with_oracle(
        &self,
        oracle: &AnswerOracle,
        answer: &str,
    ) -> Result<Judgment, JudgeError> {
        if answer.trim().is_empty() {
            return Ok(Judgment {
                status: AnswerStatus::Unsolved,
                rationale: "empty answer".into(),
                flagged: false,
            });
        }
        let mut hits = 0;
        for m in &oracle.required {
            if self.matches(m, answer)? {
                hits += 1;
            }
        }
        let total = oracle.required.len();
        let status = if hits == total {
            AnswerStatus::Solved
        } else if hits > 0 {
            AnswerStatus::Unsure
        } else {
            AnswerStatus::Unsolved
        };
        Ok(Judgment {
            status,
            rationale: format!("{hits}/{total} required patterns present"),
            flagged: false,
        })
    }
}

impl JudgeBackend for MockJudge {
    fn judge(&self, task: &Task, answer: &str) -> Result<Judgment, JudgeError> {
        match &task.oracle {
            Some(oracle) => self.judge_with_oracle(oracle, answer),
            None if answer.trim().is_empty() => self.judge_with_oracle(&AnswerOracle::default(), answer),
            None => Ok(Judgment {
                status: AnswerStatus::Unsure,
                rationale: "task has no oracle".into(),
                flagged: true,
            }),
        }
    }
}

pub fn render_judge_prompt(query: &str, answer: &str) -> String {
    JUDGE_PROMPT_TEMPLATE
        .replace("{query}", query)
        .replace("{answer}", answer)
}

/// Extract `answer_status` (and `content`) from a judge reply.
///
/// Accepts bare JSON, fenced JSON, or JSON embedded in prose, optionally
/// nested under `check_answer_status`.
pub fn parse_judge_reply(text: &str) -> Option<(AnswerStatus, String)> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let value: Value = serde_json::from_str(&text[start..=end]).ok()?;
    let obj = value.get("check_answer_status").unwrap_or(&value);
    let status = AnswerStatus::parse(obj.get("answer_status")?.as_str()?)?;
    let content = obj
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Some((status, content))
}

/// LLM judge over a chat-completions endpoint using the bundled prompt.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    client: ChatClient,
}

impl RemoteJudge {
    pub fn new(client: ChatClient) -> Self {
        Self { client }
    }
}

impl JudgeBackend for RemoteJudge {
    fn judge(&self, task: &Task, answer: &str) -> Result<Judgment, JudgeError> {
        let prompt = render_judge_prompt(&task.query, answer);
        let messages = [ChatMessage::user(prompt)];
        let mut last = String::new();
        // one retry on an unparseable verdict
        for _ in 0..2 {
            let reply = self.client.complete(&messages, 0.0, None)?;
            if let Some((status, rationale)) = parse_judge_reply(&reply.text) {
                return Ok(Judgment {
                    status,
                    rationale,
                    flagged: false,
                });
            }
            last = reply.text;
        }
        Ok(Judgment {
            status: AnswerStatus::Unsure,
            rationale: format!("unparseable judge response: {last}"),
            flagged: true,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("pass rate of an empty status list")]
pub struct EmptyStatuses;

/// Mean answer-status score.
pub fn sopr(statuses: &[AnswerStatus]) -> Result<f64, EmptyStatuses> {
    if statuses.is_empty() {
        return Err(EmptyStatuses);
    }
    let sum: f64 = statuses.iter().copied().map(status_score).sum();
    Ok(sum / statuses.len() as f64)
}
