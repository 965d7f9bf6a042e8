//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numeric quantity left the finite range.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A record failed structural validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// A resource that the operation needs is empty or missing.
    #[error("unavailable: {0}")]
    Unavailable(String),
    /// An index is out of range.
    #[error("index out of range: {0}")]
    Index(String),
    /// A file failed an integrity check (magic bytes, truncation, trailing data).
    #[error("integrity error: {0}")]
    Integrity(String),
    /// A file was written by an incompatible format revision.
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    /// A checkpoint and the requested use of it do not match.
    #[error("compatibility error: {0}")]
    Compatibility(String),
    /// A run configuration is invalid.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
