use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bytes or text that do not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: {what} needs {needed} bytes, only {available} available")]
    Truncated {
        what: String,
        needed: usize,
        available: usize,
    },

    /// A value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Not enough data, or a request that would exceed a resource budget.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
