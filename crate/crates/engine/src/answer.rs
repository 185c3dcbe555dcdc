//! Final-answer detection and assembly.

use stepcode_core::chat::{ChatClient, ChatMessage};
use stepcode_core::{AnswerSource, Task};

use crate::prompt::HistoryEntry;

/// Whether any line of `stdout` starts with the sentinel.
pub fn has_sentinel(stdout: &str, sentinel: &str) -> bool {
    stdout.lines().any(|l| l.trim_start().starts_with(sentinel))
}

/// Text after the first sentinel line's marker, plus every later line of
/// the same output.
pub fn sentinel_answer(stdout: &str, sentinel: &str) -> Option<String> {
    let lines: Vec<&str> = stdout.lines().collect();
    let at = lines.iter().position(|l| l.trim_start().starts_with(sentinel))?;
    let first = lines[at].trim_start()[sentinel.len()..].trim();
    let mut out = vec![first];
    out.extend(lines[at + 1..].iter().copied());
    Some(out.join("\n").trim().to_string())
}

/// Deterministic pairing of each step's thought with its output.
pub fn concatenate_steps(history: &[HistoryEntry]) -> String {
    history
        .iter()
        .enumerate()
        .map(|(i, h)| format!("Step{}: {} => {}", i + 1, h.thought, h.stdout.trim_end()))
        .collect::<Vec<_>>()
        .join("\n")
}

const REORGANIZE_INSTRUCTION: &str = "You are given a user query and the steps an assistant took to answer it, each step as a thought paired with the tool output it printed. Reorganize this information into one coherent natural-language answer to the query. Use only facts present in the outputs.";

/// How an answer is produced when no step printed the sentinel.
#[derive(Debug, Clone, Default)]
pub enum AnswerComposer {
    /// Offline: the deterministic thought/output concatenation.
    #[default]
    Concatenate,
    /// Ask a chat model to reorganize the thought/output pairs.
    Remote(ChatClient),
}

/// Final answer for a finished step sequence.
///
/// The latest step that printed the sentinel wins. Otherwise the composer
/// reorganizes the steps; a failing remote composer degrades to the
/// concatenation.
pub fn compose_final_answer(
    task: &Task,
    history: &[HistoryEntry],
    composer: &AnswerComposer,
    sentinel: &str,
) -> (String, AnswerSource) {
    if let Some(answer) = history.iter().rev().find_map(|h| sentinel_answer(&h.stdout, sentinel)) {
        return (answer, AnswerSource::Sentinel);
    }
    let pairs = concatenate_steps(history);
    match composer {
        AnswerComposer::Concatenate => (pairs, AnswerSource::Concatenated),
        AnswerComposer::Remote(client) => {
            let messages = [
                ChatMessage::system(REORGANIZE_INSTRUCTION),
                ChatMessage::user(format!("Query: {}\n\nSteps:\n{pairs}", task.query)),
            ];
            match client.complete(&messages, 0.0, None) {
                Ok(c) => (c.text.trim().to_string(), AnswerSource::Backend),
                Err(e) => {
                    tracing::warn!(task = %task.id, error = %e, "answer composition failed; concatenating");
                    (pairs, AnswerSource::Concatenated)
                }
            }
        }
    }
}
