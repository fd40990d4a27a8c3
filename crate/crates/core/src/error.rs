use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input has no well-defined result (zero vector, empty direction).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Binary embedding file could not be decoded; `field` names the offending part.
    #[error("format error: {field}")]
    Format { field: String },

    /// One or more annotation records failed validation.
    #[error("{} invalid annotation record(s); first at line {}: {}", .0.len(), .0[0].line, .0[0].reason)]
    Records(Vec<RecordError>),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub reason: String,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Degenerate(_) => "degenerate_input",
            Error::Format { .. } => "format",
            Error::Records(_) => "record",
            Error::Training { .. } => "training",
            Error::Config(_) => "config",
            Error::Stage { .. } => "stage",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serialization",
        }
    }
}
