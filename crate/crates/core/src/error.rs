use std::io;

use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants follow the failure classes callers need to tell apart:
/// a bad configuration (shapes, invalid combinations), bad data (out of range
/// values, malformed files), and API misuse (calling things in the wrong order).
#[derive(Debug, Error)]
pub enum NavError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl NavError {
    /// The message without the variant prefix, for re-wrapping with context.
    pub fn detail(&self) -> String {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Usage(m) | Self::MissingCheckpoint(m) => m.clone(),
            Self::Io(e) => e.to_string(),
        }
    }
}

pub type Result<T, E = NavError> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NavError::Config(msg.into()))
}

pub(crate) fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NavError::Data(msg.into()))
}

pub(crate) fn usage_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NavError::Usage(msg.into()))
}
