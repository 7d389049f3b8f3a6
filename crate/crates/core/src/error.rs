use thiserror::Error;

use crate::optimizer::OptimizationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation. `field` is a dotted path such as
    /// `library.base_size_mbit`.
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("{what} index {index} out of range (0..{len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("placement is infeasible: {0}")]
    Infeasible(String),

    #[error("optimizer aborted at iteration {iteration}: {reason}")]
    OptimizerAbort {
        iteration: usize,
        reason: String,
        trace: Box<OptimizationTrace>,
    },

    #[error("library fingerprint mismatch: placement has {placement}, config has {config}")]
    FingerprintMismatch { placement: String, config: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Rejects NaN/inf and values below `min` (inclusive bound).
pub(crate) fn require_at_least(field: &str, value: f64, min: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::invalid(
            field,
            format!("must be finite, got {value}"),
        ));
    }
    if value < min {
        return Err(Error::invalid(
            field,
            format!("must be >= {min}, got {value}"),
        ));
    }
    Ok(())
}

pub(crate) fn require_positive(field: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::invalid(
            field,
            format!("must be finite and > 0, got {value}"),
        ));
    }
    Ok(())
}

pub(crate) fn require_probability(field: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(
            field,
            format!("must lie in [0, 1], got {value}"),
        ));
    }
    Ok(())
}
