use std::path::PathBuf;

use thiserror::Error;

use crate::table::Violation;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("table {source_id} failed validation: {}", format_violations(.violations))]
    Validation {
        source_id: String,
        violations: Vec<Violation>,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch for {name}: stored {stored:?}, architecture expects {expected:?}")]
    CheckpointShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
}

/// Coarse failure class, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
