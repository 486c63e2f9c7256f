use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Training produced a non-finite loss.
    #[error("divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },

    /// A checkpoint payload does not conform to its format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Core(#[from] evikit_core::Error),

    // Display omits the cause; source() carries it for chain printers.
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
