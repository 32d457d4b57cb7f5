//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("manifest parse failed with {} error(s):\n{}", .0.len(), .0.join("\n"))]
    ManifestParse(Vec<String>),

    #[error("training diverged at {context}: {detail}")]
    Divergence { context: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown backbone {name:?}; registered: {available:?}")]
    UnknownBackbone { name: String, available: Vec<String> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    /// The CLI maps these to exit code 1 and training failures to 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Divergence { .. })
    }
}
