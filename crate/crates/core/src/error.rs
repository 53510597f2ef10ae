use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("kernel matrix not PD (jitter escalated to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("safety layer not ready: {0}")]
    SafetyNotReady(&'static str),

    #[error("warmup incomplete: replay buffer holds {size} transitions, batch needs {needed}")]
    WarmupIncomplete { size: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
