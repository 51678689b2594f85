//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by mesh I/O, model construction, and registration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure.
    #[error("i/o error{}: {source}", path_suffix(.path))]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },

    /// A mesh file could not be parsed. `offset` is the byte offset of the
    /// first unparseable content.
    #[error("format error at byte {offset}{}: {message}", path_suffix(.path))]
    Format {
        path: Option<PathBuf>,
        offset: usize,
        message: String,
    },

    /// Input violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical procedure failed (non-PSD matrix, failed factorization).
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn with_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format {
                offset, message, ..
            } => Error::Format {
                path: Some(path.into()),
                offset,
                message,
            },
            Error::Io { source, .. } => Error::Io {
                path: Some(path.into()),
                source,
            },
            other => other,
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" in {}", p.display()),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
