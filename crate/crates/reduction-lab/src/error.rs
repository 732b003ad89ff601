//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input failed a structural precondition (bad shape, bad norm, bad parameter).
    #[error("validation failed for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A time or interval argument lies outside the domain of a schedule or grid.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/posterior length does not match the spectrum size.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Level index out of range.
    #[error("level index {index} out of range for {len} levels")]
    Index { index: usize, len: usize },

    /// A numeric input was NaN or infinite where a finite value is required.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// The initial state has no overlap with any retained eigenspace.
    #[error("initial state has no overlap with any retained eigenspace")]
    EmptySupport,

    /// An operation was applied to a coupling schedule of the wrong collapse regime.
    #[error("regime error: {0}")]
    Regime(String),

    /// Random-data recovery rejected a trajectory whose terminal posterior is
    /// still ambiguous. Carries the terminal posterior vector for diagnosis.
    #[error("trajectory not collapsed: terminal max posterior {max_posterior:.6} < 1 - {tol:e}")]
    NotCollapsed {
        max_posterior: f64,
        tol: f64,
        terminal_posteriors: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
