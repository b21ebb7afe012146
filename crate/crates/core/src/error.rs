use thiserror::Error;

/// Failures raised by the filtering and truth-generation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    /// Courant number above one at some station.
    #[error("CFL violated at station {station}: |lambda| = {lambda}")]
    Cfl { station: usize, lambda: f64 },

    #[error("innovation covariance is not positive definite at time index {time_index}")]
    SingularInnovation { time_index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("characteristics collapsed to {distinct} distinct position(s) at step {step}")]
    CollapsedCharacteristics { step: usize, distinct: usize },

    #[error("center of mass undefined: field has no positive mass")]
    NoPositiveMass,

    #[error("observation at time index {found} does not belong to step {expected}")]
    ObservationTime { expected: usize, found: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
