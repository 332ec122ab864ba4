//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or signal dimensions do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A numerical kernel failed to converge or produced a degenerate result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The operation is defined only for a restricted system class.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// File or stream format violation.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
