//! Crate-wide error type. Every user-facing failure carries one of the
//! stable message prefixes below; the CLI maps them to exit codes.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A field, category, or task name is not declared in the schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// Text contains a character outside the glyph charset.
    #[error("charset error: {0}")]
    Charset(String),
    /// Tensor shapes are incompatible for an operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An argument is out of the accepted range.
    #[error("argument error: {0}")]
    Argument(String),
    /// Training aborted (NaN loss, exhausted stream, bad config).
    #[error("training error: {0}")]
    Training(String),
    /// A corpus, checkpoint, config, or result file is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for validation failures, 2 for
    /// invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}
