use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("framing error at byte offset {offset}: {reason}")]
    Framing { offset: usize, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no spike found (correlation peak {peak:e} below floor)")]
    NoSpike { peak: f64 },

    #[error("pdf grids differ")]
    GridMismatch,

    #[error("length {0} is not a power of two")]
    Size(usize),

    #[error("index {index} out of range for {len} symbols")]
    Range { index: usize, len: usize },

    #[error("bit stream exhausted after {decoded} of {expected} symbols")]
    Truncated { decoded: usize, expected: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
