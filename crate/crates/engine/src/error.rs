use stepcode_core::chat::ChatError;
use stepcode_core::judge::JudgeError;
use stepcode_core::reward::RewardError;
use stepcode_core::CoreError;
use stepcode_exec::GatewayError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy backend unreachable: {0}")]
    BackendUnreachable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid task {task}: {violations}")]
    InvalidTask { task: String, violations: String },

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Judge(#[from] JudgeError),

    #[error(transparent)]
    Reward(#[from] RewardError),

    #[error("latent scorer: {0}")]
    Scorer(String),

    #[error("latent scorer unreachable: {0}")]
    ScorerUnreachable(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ChatError> for EngineError {
    fn from(e: ChatError) -> Self {
        EngineError::BackendUnreachable(e.to_string())
    }
}

impl EngineError {
    /// Failures of the environment rather than of a run's content.
    pub fn is_environmental(&self) -> bool {
        matches!(
            self,
            EngineError::BackendUnreachable(_)
                | EngineError::ScorerUnreachable(_)
                | EngineError::Gateway(GatewayError::RunnerUnavailable(_))
                | EngineError::Judge(JudgeError::Unreachable(_))
                | EngineError::Io(_)
        )
    }
}
