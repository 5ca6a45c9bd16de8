use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} = {value} outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("volume dimensions differ: {expected:?} vs {got:?}")]
    DimsMismatch {
        expected: (usize, usize, usize, usize),
        got: (usize, usize, usize, usize),
    },

    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}; last finite loss {last_finite}")]
    Diverged { step: usize, last_finite: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than by
    /// the data or the run itself.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::OutOfRange { .. } | Error::NotPowerOfTwo(_)
        )
    }
}

pub(crate) fn out_of_range(what: &'static str, value: usize, min: usize, max: usize) -> Error {
    Error::OutOfRange {
        what,
        value: value as i64,
        min: min as i64,
        max: max as i64,
    }
}
