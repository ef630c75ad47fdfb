use thiserror::Error;

/// Errors raised anywhere in the simulator and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Quantum numbers outside their allowed range.
    #[error("invalid quantum numbers: {0}")]
    Domain(String),

    /// Configuration text could not be parsed or failed validation.
    #[error("config error at line {line}: key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    /// Parameter combination rejected after parsing (no single offending line).
    #[error("invalid parameters: `{key}`: {message}")]
    Invalid { key: String, message: String },

    /// The integrator detected norm growth, i.e. the step was too coarse.
    #[error("integrator instability at dt = {dt:e} s: {message}")]
    Instability { dt: f64, message: String },

    /// Internal bookkeeping violated (e.g. a jump on a zero-probability channel).
    #[error("logic error: {0}")]
    Logic(String),

    /// Not enough data to form an estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed time-stamp input.
    #[error("time-stamp format error at record {record}: {message}")]
    Format { record: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
