//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error for tensor, encoder, training, index, and evaluation code.
#[derive(Debug, Error)]
pub enum SedrError {
    /// Shapes of two operands are incompatible; the message names both.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A binary file is not in the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A text input file failed to parse; includes path and 1-based line.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A numerical failure (NaN/Inf loss, divergence) during computation.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SedrError>;

/// Re-wrap an IO error so the message names the file, preserving the error
/// kind (which drives the exit code).
pub(crate) fn annotate_io(path: &std::path::Path, e: std::io::Error) -> SedrError {
    SedrError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl SedrError {
    /// Process exit code for the CLI: usage/config problems exit 2,
    /// numerical or data-integrity problems exit 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            SedrError::Config(_) => 2,
            SedrError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        }
    }
}
