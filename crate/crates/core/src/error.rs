use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed or rejected row. `line` is 1-based and counts comment lines.
    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: manifest check failed: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("concept set `{name}`: {source}")]
    ConceptSet {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("week range {low}-{high} is broader than one trimester (13 weeks)")]
    RangeTooBroad { low: u32, high: u32 },

    #[error("invalid week range {low}-{high}")]
    InvalidRange { low: u32, high: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("degenerate marginals: expected agreement is 1, kappa is undefined")]
    DegenerateKappa,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Row {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
