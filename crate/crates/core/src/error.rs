use thiserror::Error;

/// Errors raised by the infosep library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or model parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix or array shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The model cannot be applied to the supplied data.
    #[error("model error: {0}")]
    Model(String),

    /// Malformed matrix or manifest file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
