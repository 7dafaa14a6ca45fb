//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EotError>;

#[derive(Debug, Error)]
pub enum EotError {
    /// Weight vector is all-zero, negative, or non-finite.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// Weights were expected to be normalized but sum to `sum`.
    #[error("weights not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    /// A message update produced a non-finite value; carries the
    /// (component, measurement) provenance of the failing entry.
    #[error("non-finite message at component {component}, measurement {measurement:?} ({what})")]
    NonFiniteMessage {
        component: usize,
        measurement: Option<usize>,
        what: &'static str,
    },

    /// Problem size exceeds the exact-enumeration guard.
    #[error("enumeration guard exceeded: {0}")]
    EnumerationGuard(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
