use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate document id {0}")]
    DuplicateDoc(u64),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("missing score for method `{0}`")]
    MissingMethod(String),

    #[error("positive candidate {0} missing from ranked list")]
    MissingPositive(u64),

    #[error("training diverged at step {step} (non-finite loss)")]
    Diverged {
        step: usize,
        last_good: Box<crate::train::TrainOutcome>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
