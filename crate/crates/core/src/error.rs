use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("symbol {0} is outside the alphabet [-255, 256]")]
    InvalidSymbol(i64),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("index out of bounds: {0}")]
    IndexError(String),

    #[error("range decoder ran past the end of the stream")]
    TruncatedStream,

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeError(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
