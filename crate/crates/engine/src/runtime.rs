//! Shared collaborators and session plumbing.

use stepcode_core::judge::JudgeBackend;
use stepcode_core::{CodeStep, ExecutionResult};
use stepcode_exec::{Gateway, SessionHandle};

use crate::answer::AnswerComposer;
use crate::error::EngineError;
use crate::policy::PolicyBackend;
use crate::prompt::{HistoryEntry, DEFAULT_SENTINEL};

/// Everything a run needs besides its configuration.
#[derive(Clone, Copy)]
pub struct Runtime<'a> {
    pub backend: &'a dyn PolicyBackend,
    pub gateway: &'a Gateway,
    pub judge: &'a dyn JudgeBackend,
    pub composer: &'a AnswerComposer,
    pub sentinel: &'a str,
}

impl<'a> Runtime<'a> {
    pub fn new(
        backend: &'a dyn PolicyBackend,
        gateway: &'a Gateway,
        judge: &'a dyn JudgeBackend,
        composer: &'a AnswerComposer,
    ) -> Self {
        Self {
            backend,
            gateway,
            judge,
            composer,
            sentinel: DEFAULT_SENTINEL,
        }
    }

    pub fn with_sentinel(mut self, sentinel: &'a str) -> Self {
        self.sentinel = sentinel;
        self
    }
}

/// A gateway session closed when dropped.
pub struct Session<'g> {
    gateway: &'g Gateway,
    handle: SessionHandle,
}

impl<'g> Session<'g> {
    pub fn open(gateway: &'g Gateway, task: &stepcode_core::Task) -> Result<Self, EngineError> {
        Ok(Self {
            gateway,
            handle: gateway.open_session(task)?,
        })
    }

    pub fn handle(&self) -> &SessionHandle {
        &self.handle
    }

    pub fn fork(&self) -> Result<Session<'g>, EngineError> {
        Ok(Session {
            gateway: self.gateway,
            handle: self.gateway.fork_session(&self.handle)?,
        })
    }

    /// Execute `step` here and keep it as committed state. Placeholders are
    /// not executed and leave the state untouched.
    pub fn run_and_commit(&mut self, step: &CodeStep, timeout_ms: u64) -> Result<ExecutionResult, EngineError> {
        if step.is_placeholder() {
            return Ok(ExecutionResult::protocol_error("no code block in model output"));
        }
        let result = self.gateway.exec_step(&self.handle, &step.code, timeout_ms)?;
        self.handle.commit_outcome(step.code.clone(), result.status, timeout_ms);
        Ok(result)
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        if let Err(e) = self.gateway.close_session(&self.handle) {
            tracing::debug!(session = %self.handle.session_id, error = %e, "session close failed");
        }
    }
}

/// Fork `parent` and run `step` on the fork.
pub fn advance<'g>(
    parent: &Session<'g>,
    step: &CodeStep,
    timeout_ms: u64,
) -> Result<(Session<'g>, ExecutionResult), EngineError> {
    let mut child = parent.fork()?;
    let result = child.run_and_commit(step, timeout_ms)?;
    Ok((child, result))
}

pub fn history_entry(step: &CodeStep, exec: &ExecutionResult) -> HistoryEntry {
    HistoryEntry {
        thought: step.thought.clone(),
        code: step.code.clone(),
        stdout: exec.stdout.clone(),
    }
}
