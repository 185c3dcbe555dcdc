//! Minimal JSON-mode baseline: one tool call per model turn, each response
//! fed back as text truncated to a fixed byte budget.
//!
//! The "model" is an action script. Its closing answer is assembled from
//! values of named keys found in the truncated observations, so anything
//! cut off by truncation is lost to it.

use std::collections::BTreeMap;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use stepcode_core::judge::{judge_answer, JudgeBackend};
use stepcode_core::{whitespace_token_count, AnswerStatus, Task};
use stepcode_exec::interp::ToolHost;
use stepcode_exec::ToolProxy;

/// Default observation budget in bytes.
pub const DEFAULT_TRUNCATION_BYTES: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum JsonAction {
    Call {
        tool: String,
        #[serde(default)]
        params: Json,
    },
    /// Answer with `text`, or with every value of the `extract` keys seen
    /// in observations so far, joined by ", ".
    Answer {
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        extract: Vec<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JsonScriptBook {
    pub tasks: BTreeMap<String, Vec<JsonAction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonTurn {
    pub action: JsonAction,
    pub observation: String,
    pub truncated: bool,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonRun {
    pub task_id: String,
    pub turns: Vec<JsonTurn>,
    pub final_answer: String,
    pub answer_status: AnswerStatus,
    pub depth: u32,
    pub total_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Cut `text` to at most `budget` bytes on a char boundary.
pub fn truncate_observation(text: &str, budget: usize) -> (String, bool) {
    if text.len() <= budget {
        return (text.to_string(), false);
    }
    let cut = (0..=budget).rev().find(|&i| text.is_char_boundary(i)).unwrap_or(0);
    (text[..cut].to_string(), true)
}

/// Every complete string or number value of `key` in `text`, in order.
pub fn extract_values(text: &str, key: &str) -> Vec<String> {
    let pattern = format!(r#""{}"\s*:\s*(?:"((?:[^"\\]|\\.)*)"|(-?[0-9][0-9.eE+-]*)[,}}\]])"#, regex::escape(key));
    let re = Regex::new(&pattern).expect("valid extraction pattern");
    re.captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().to_string()))
        .collect()
}

/// Whitespace tokens of the action as a model would emit it, one JSON
/// token per key or value rather than one per compact object.
fn action_tokens(action: &JsonAction) -> u64 {
    let value = serde_json::to_value(action).unwrap_or_default();
    whitespace_token_count(&serde_json::to_string_pretty(&value).unwrap_or_default())
}

/// Run one task's action script. A script that ends without answering
/// yields an empty answer.
pub fn run_json_task(
    task: &Task,
    actions: &[JsonAction],
    proxy: &ToolProxy,
    judge: &dyn JudgeBackend,
    budget: usize,
) -> JsonRun {
    let session = format!("json-mode/{}", task.id);
    proxy.register(&session, Arc::new(task.toolset.clone()));
    let mut turns = Vec::new();
    let mut answer = String::new();
    for action in actions.iter().take(task.max_depth as usize) {
        let tokens = action_tokens(action);
        match action {
            JsonAction::Call { tool, params } => {
                let raw = match proxy.call_tool(&session, tool, params.clone()) {
                    Ok(body) => serde_json::to_string(&body).unwrap_or_default(),
                    Err(f) => format!("error: {}", f.message),
                };
                let (observation, truncated) = truncate_observation(&raw, budget);
                turns.push(JsonTurn {
                    action: action.clone(),
                    observation,
                    truncated,
                    tokens,
                });
            }
            JsonAction::Answer { text, extract } => {
                answer = match text {
                    Some(t) => t.clone(),
                    None => {
                        let seen: Vec<String> = turns
                            .iter()
                            .flat_map(|t| extract.iter().flat_map(|k| extract_values(&t.observation, k)))
                            .collect();
                        seen.join(", ")
                    }
                };
                turns.push(JsonTurn {
                    action: action.clone(),
                    observation: String::new(),
                    truncated: false,
                    tokens,
                });
                break;
            }
        }
    }
    proxy.unregister(&session);
    let (answer_status, error) = match judge_answer(judge, task, &answer) {
        Ok(s) => (s, None),
        Err(e) => (AnswerStatus::Unsolved, Some(e.to_string())),
    };
    JsonRun {
        task_id: task.id.clone(),
        depth: turns.len() as u32,
        total_tokens: turns.iter().map(|t| t.tokens).sum(),
        turns,
        final_answer: answer,
        answer_status,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stepcode_core::canonical::to_canonical_string;

    fn action_text(action: &JsonAction) -> String {
        to_canonical_string(action).unwrap()
    }

    #[test]
    fn truncation_respects_budget_and_boundaries() {
        assert_eq!(truncate_observation("abc", 5), ("abc".into(), false));
        assert_eq!(truncate_observation("abcdef", 3), ("abc".into(), true));
        let (s, cut) = truncate_observation("aé", 2);
        assert_eq!((s.as_str(), cut), ("a", true));
    }

    #[test]
    fn extraction_finds_complete_values_only() {
        let text = r#"{"tag":"red","n":12,"x":{"tag":"blue"},"tag":"gre"#;
        assert_eq!(extract_values(text, "tag"), vec!["red", "blue"]);
        assert_eq!(extract_values(text, "n"), vec!["12"]);
        assert!(extract_values(text, "missing").is_empty());
        assert_eq!(extract_values(r#"{"s":"a\"b"}"#, "s"), vec![r#"a\"b"#]);
    }

    #[test]
    fn actions_serialize_with_tag() {
        let a = JsonAction::Call {
            tool: "t".into(),
            params: serde_json::json!({"k": 1}),
        };
        assert_eq!(action_text(&a), r#"{"action":"call","params":{"k":1},"tool":"t"}"#);
        // {, "action": "call", "params": {, "k": 1, }, "tool": "t", }
        assert_eq!(action_tokens(&a), 11);
        let back: JsonAction = serde_json::from_str(r#"{"action":"answer","extract":["k"]}"#).unwrap();
        assert_eq!(
            back,
            JsonAction::Answer {
                text: None,
                extract: vec!["k".into()]
            }
        );
    }
}
