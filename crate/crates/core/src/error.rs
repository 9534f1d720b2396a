use std::io;

use thiserror::Error;

/// Errors produced by the quantization toolkit.
#[derive(Debug, Error)]
pub enum QuartzError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl QuartzError {
    /// True for malformed files and I/O failures, false for bad arguments.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, QuartzError::Format(_) | QuartzError::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, QuartzError>;

pub(crate) fn validation(msg: impl Into<String>) -> QuartzError {
    QuartzError::Validation(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> QuartzError {
    QuartzError::Format(msg.into())
}
