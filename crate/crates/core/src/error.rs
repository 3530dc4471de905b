use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mask: expected length {expected}, got {got}")]
    InvalidMask { expected: usize, got: usize },

    #[error("invalid example: {0}")]
    InvalidExample(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient in component `{component}`")]
    NumericOverflow { component: String },

    #[error("training diverged at epoch {epoch} (validation loss {loss})")]
    TrainingDiverged { epoch: u32, loss: f64 },

    #[error("incompatible gradients: {0}")]
    IncompatibleGradient(String),

    #[error("checkpoint lists do not match: {0}")]
    CheckpointMismatch(String),

    #[error("probe spec error: {0}")]
    ProbeSpec(String),

    #[error("gradient cache miss for {} (example, epoch) pairs: {missing:?}", missing.len())]
    CacheMiss { missing: Vec<(u64, u32)> },

    #[error("integrity error in {path} at byte offset {offset}: {reason}")]
    Integrity { path: PathBuf, offset: u64, reason: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("empty ranking")]
    EmptyRanking,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("missing prerequisite: {}", .0.display())]
    MissingPrerequisite(PathBuf),

    #[error("incomplete results: {0}")]
    Incomplete(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
