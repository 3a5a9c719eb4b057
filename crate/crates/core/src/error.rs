use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that do not line up. `what` names the offending axes.
    #[error("dimension error in {op}: {what}")]
    Dimension { op: &'static str, what: String },

    /// A precondition on arguments was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg} (byte offset {offset})")]
    Parse {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (batch samples: {batch:?})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch: Vec<String>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, what: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            what: what.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } => 2,
            _ => 3,
        }
    }
}
