use thiserror::Error;

/// Errors produced by stream, simulation, restoration and file-format code.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A coordinate, timestamp or index lies outside its valid range.
    #[error("range error: {0}")]
    Range(String),

    /// A binary or text payload does not conform to its format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Threshold estimation had no usable signal.
    #[error("estimation error: {0}")]
    Estimation(String),

    // The cause is source(), not part of Display: chain printers would
    // otherwise show the same message twice.
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
