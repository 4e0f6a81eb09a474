use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, parameters or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was attempted in a state that does not allow it
    /// (stepping a drained pipeline, flushing twice, ...).
    #[error("state error: {0}")]
    State(String),

    /// The network definition cannot be turned into a pipeline graph.
    #[error("compile error: {0}")]
    Compile(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: &'static str },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("incomplete store: no weights for stage `{stage}`")]
    IncompleteStore { stage: String },

    #[error("dimension mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    DimMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
