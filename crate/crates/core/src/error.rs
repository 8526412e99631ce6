use std::io;

/// Errors produced anywhere in the codec pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    /// Unsupported or malformed file contents.
    #[error("format error: {0}")]
    Format(String),
    /// Artifact was produced under a different configuration or format version.
    #[error("version/digest mismatch: {0}")]
    Version(String),
    /// Payload ended before the advertised number of frames.
    #[error("framing error: {0}")]
    Framing(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// NaN/Inf encountered where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(e) => Error::Io(e),
            other => Error::Format(other.to_string()),
        }
    }
}
