use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },

    #[error("numeric error: non-finite value produced by {op}")]
    Numeric { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("stale tape: backward already ran on this graph")]
    StaleTape,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
