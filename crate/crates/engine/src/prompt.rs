//! Prompt assembly for stepwise code generation.

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::prefix_hash;
use stepcode_core::chat::ChatMessage;
use stepcode_core::{Task, ToolDoc};

pub const STEPWISE_PROMPT_VERSION: &str = "stepwise_v1";
pub const STEPWISE_PROMPT_TEMPLATE: &str = include_str!("../prompts/stepwise_v1.txt");

/// Default line prefix that marks the final answer in step output.
pub const DEFAULT_SENTINEL: &str = "FINAL ANSWER:";

/// One committed step as the model sees it again.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub thought: String,
    pub code: String,
    /// Full, untruncated output of the step.
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub task_id: String,
    pub system_instruction: String,
    pub tool_docs_rendering: String,
    pub history: Vec<HistoryEntry>,
    pub query: String,
}

impl PromptBundle {
    /// Hash of the committed code texts, the lookup key of scripted backends.
    /// Placeholder steps contribute an empty code text.
    pub fn prefix_hash(&self) -> String {
        let codes: Vec<&str> = self.history.iter().map(|h| h.code.as_str()).collect();
        prefix_hash(&codes)
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let system = format!("{}\n{}", self.system_instruction, self.tool_docs_rendering);
        let mut user = format!("Query: {}\n", self.query);
        if !self.history.is_empty() {
            user.push_str("\nPrevious steps:\n");
            for (i, h) in self.history.iter().enumerate() {
                user.push_str(&format!(
                    "\nStep {}\nThought: {}\nCode:\n```python\n{}\n```\nOutput:\n{}\n",
                    i + 1,
                    h.thought,
                    h.code,
                    h.stdout
                ));
            }
        }
        user.push_str(&format!("\nWrite step {}.", self.history.len() + 1));
        vec![ChatMessage::system(system), ChatMessage::user(user)]
    }
}

pub fn render_tool_doc(doc: &ToolDoc) -> String {
    let mut out = format!(
        "- {} [{} {}]: {}\n",
        doc.name,
        doc.http_method.as_str(),
        doc.url_template,
        doc.description
    );
    for p in &doc.params {
        let kind = serde_json::to_value(p.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let need = if p.required { "required" } else { "optional" };
        out.push_str(&format!("    {} ({kind}, {need}): {}\n", p.name, p.description));
    }
    out
}

pub fn render_tool_docs(tools: &[ToolDoc]) -> String {
    tools.iter().map(render_tool_doc).collect()
}

/// Prompt for the next step given the steps committed so far.
pub fn assemble_prompt(task: &Task, history: &[HistoryEntry], sentinel: &str) -> PromptBundle {
    PromptBundle {
        task_id: task.id.clone(),
        system_instruction: STEPWISE_PROMPT_TEMPLATE.replace("{sentinel}", sentinel),
        tool_docs_rendering: render_tool_docs(&task.toolset),
        history: history.to_vec(),
        query: task.query.clone(),
    }
}
