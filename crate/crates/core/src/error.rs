use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quantizer saturation: level {level} with offset {offset} outside [0, 2^{bits})")]
    Saturation { level: i64, offset: u64, bits: u32 },

    #[error("code construction failed: {0}")]
    CodeConstruction(String),

    #[error("missing code for rate index {0}")]
    MissingCode(usize),

    #[error("malformed bitstream: {0}")]
    Format(String),

    #[error("solver diverged after {restarts} restarts")]
    Diverged { restarts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
