use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("task generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("no plan found: frontier exhausted after {expansions} expansions")]
    NoPlan { expansions: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error(transparent)]
    Malformed(#[from] crate::tokens::ParseError),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss in batch {batch}")]
    NonFinite { batch: usize },

    #[error("training diverged at step {step}: loss {loss} stayed above 10x the initial loss {initial}")]
    Diverged { step: u64, loss: f64, initial: f64 },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
