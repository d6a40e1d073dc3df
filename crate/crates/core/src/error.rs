use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the intent-space library.
///
/// Every variant maps to one category returned by [`Error::category`], which
/// the command-line front end turns into an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("intent `{intent}` has {available} examples, {requested} requested for validation")]
    Split {
        intent: String,
        available: usize,
        requested: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("unsupported basis form: {0}")]
    UnsupportedForm(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Coarse error category, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Shape,
    Numeric,
    Input,
    Config,
    Eval,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape(_) | Error::UnsupportedForm(_) => ErrorCategory::Shape,
            Error::Numeric(_) | Error::Domain(_) => ErrorCategory::Numeric,
            Error::Parse { .. } | Error::Format(_) | Error::EmptyInput(_) | Error::Serde(_) => {
                ErrorCategory::Input
            }
            Error::Split { .. } | Error::Config(_) | Error::Range(_) => ErrorCategory::Config,
            Error::Eval(_) => ErrorCategory::Eval,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
