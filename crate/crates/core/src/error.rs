//! Crate-wide error type.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed content at a known location in an input file.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    /// A whole-file problem (bad schema, failed validation).
    #[error("{path}: {msg}")]
    Input { path: String, msg: String },

    /// A domain precondition or invariant was violated.
    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn input(path: &Path, msg: impl Into<String>) -> Self {
        Error::Input {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }

    pub fn parse(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
