use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ImtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ImtError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("numerical failure in {0}")]
    Numerical(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("baseline failure: {0}")]
    Baseline(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImtError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ImtError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImtError::Io {
            path: path.into(),
            source,
        }
    }
}
