use std::io;

use crate::report::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A text rating file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary file is corrupt or of the wrong kind.
    #[error("format error: {0}")]
    Format(String),

    /// A run configuration is inconsistent (capacity, grid shape, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    /// A feature element became non-finite. Carries the report recorded up
    /// to the last completed epoch when one is available.
    #[error("training diverged in epoch {epoch}: non-finite feature value")]
    Diverged {
        epoch: usize,
        report: Option<Box<TrainReport>>,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
