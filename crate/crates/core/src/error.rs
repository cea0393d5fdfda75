use std::path::PathBuf;

use thiserror::Error;

/// Which half of a coupled run failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunSide {
    Base,
    Neighbor,
}

impl std::fmt::Display for RunSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunSide::Base => f.write_str("base"),
            RunSide::Neighbor => f.write_str("neighbor"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected at least {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("non-finite value at step {step}")]
    Divergence { step: usize },

    #[error("{side} run diverged at step {step}")]
    CoupledDivergence { side: RunSide, step: usize },

    #[error("step-size precondition violated: {0}")]
    PreconditionRefused(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
