use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input at a known location. `line` is 1-based.
    #[error("{what}:{line}: {message}")]
    Parse { what: String, line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch for '{id}': expected {expected}, found {found}")]
    Dimension { id: String, expected: usize, found: usize },

    #[error("unknown {kind} '{id}'")]
    Unknown { kind: &'static str, id: String },

    #[error("missing {what} for: {}", ids.join(", "))]
    Missing { what: &'static str, ids: Vec<String> },

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("non-finite parameter in {0}")]
    NonFinite(String),

    #[error("model file: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by diverging numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
