use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RcmlError>;

#[derive(Debug, Error)]
pub enum RcmlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-binary label at row {row}, column {col}: {value:?}")]
    NonBinaryLabel { row: usize, col: usize, value: String },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("unmatched id: {features}/{labels}")]
    UnmatchedId { features: String, labels: String },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty selection")]
    EmptySelection,

    #[error("average precision undefined: no positive labels")]
    UndefinedAp,

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Divergence { epoch: usize, batch: usize, what: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RcmlError {
    /// Process exit code: 3 for divergence, 4 for I/O, 2 for everything
    /// else (bad configs or inputs).
    pub fn exit_code(&self) -> i32 {
        match self {
            RcmlError::Divergence { .. } | RcmlError::NonFinite(_) => 3,
            RcmlError::Io { .. } => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RcmlError::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        RcmlError::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        RcmlError::ShapeMismatch(msg.into())
    }
}
