use thiserror::Error;

/// Errors produced anywhere in the hedging library.
#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Computation(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HedgeError>;

pub(crate) fn ensure_finite(value: f64, name: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(HedgeError::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(HedgeError::InvalidInput(format!("{name} must be positive, got {value}")))
    }
}
