use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid query: {0}")]
    Query(String),

    #[error("checkpoint was trained on graph {expected}, but the loaded graph is {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} on query ({head}, {relation}, {tail})")]
    NonFiniteLoss {
        loss: f64,
        head: String,
        relation: String,
        tail: String,
    },

    #[error("operation count {count} exceeds bound {bound} (K={hops}, D={budget}, n={n})")]
    BoundViolation {
        count: u64,
        bound: u64,
        hops: usize,
        budget: usize,
        n: usize,
    },

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
