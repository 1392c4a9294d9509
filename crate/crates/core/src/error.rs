use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by market generation, the matching engines and the
/// experiment and counterfactual pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("instance too large for exhaustive enumeration: {agents} agents on one side exceeds the limit of {limit}")]
    TooLarge { agents: usize, limit: usize },

    #[error("threshold not bracketed for {kind}: estimate {lo_value:.6} at d={lo} and {hi_value:.6} at d={hi}")]
    NotBracketed {
        kind: String,
        lo: usize,
        lo_value: f64,
        hi: usize,
        hi_value: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("referential integrity violated: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
