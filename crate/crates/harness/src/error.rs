use std::path::PathBuf;

use stepcode_engine::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("environment: {0}")]
    Environment(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::File { path, source }
    }

    pub fn malformed(what: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        HarnessError::Malformed {
            what: what.into(),
            detail: detail.to_string(),
        }
    }

    /// Process exit code: 1 usage/config, 2 environment.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) | HarnessError::Malformed { .. } => 1,
            HarnessError::Engine(e) if !e.is_environmental() => match e {
                EngineError::Config(_) | EngineError::InvalidTask { .. } => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
