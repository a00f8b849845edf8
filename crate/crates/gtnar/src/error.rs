//! Crate-wide error and result types.

use thiserror::Error;

/// Errors produced by tensor algebra, data generation, estimation, and I/O.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid argument or malformed input data.
    #[error("validation error: {0}")]
    Validation(String),

    /// Shape disagreement between tensors, matrices, or index sets.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A group has no member nodes where at least one is required.
    #[error("empty group {group} in mode {mode}")]
    EmptyGroup { mode: usize, group: usize },

    /// The normal system is singular or too ill-conditioned to solve.
    #[error("singular normal system: {detail} (reciprocal condition estimate {rcond:.3e})")]
    Singular { detail: String, rcond: f64 },

    /// Parameters violate the stationarity condition.
    #[error("unstable parameters: max group-wise spectral bound {max_abs:.6} >= 1 at group tuple {worst_tuple:?}")]
    Unstable { max_abs: f64, worst_tuple: Vec<usize> },

    /// Estimation failed for every initialization candidate.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Underlying numerical routine failed.
    #[error("computation error: {0}")]
    Computation(String),

    /// Filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV input.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed JSON input.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than model or numeric failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Shape(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
