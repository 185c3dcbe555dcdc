use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("runner unavailable: {0}")]
    RunnerUnavailable(String),

    #[error("runner protocol violation: {0}")]
    Protocol(String),

    #[error("no such session: {0}")]
    NoSuchSession(String),

    #[error("replay diverged in session {session} at prefix step {step}: {status}: {stderr}")]
    ReplayDivergence {
        session: String,
        step: usize,
        status: String,
        stderr: String,
    },

    #[error("proxy endpoint: {0}")]
    Proxy(String),

    #[error("cache file: {0}")]
    Cache(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
