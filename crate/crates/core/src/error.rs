//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HomtomoError {
    /// Grid parameters violate a structural constraint.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two values defined on different grids were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A state failed a normalization requirement.
    #[error("state not normalized: norm^2 = {norm_sq}")]
    NotNormalized { norm_sq: f64 },

    /// An index was outside the grid.
    #[error("index {index} out of range for grid of {n_points} points")]
    IndexOutOfRange { index: usize, n_points: usize },

    /// Pulse or state parameters are invalid on the given grid.
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    /// Too much norm would leave the grid window (aliasing guard).
    #[error("norm leakage {leakage:.3e} exceeds limit {limit:.3e}")]
    NormLeakage { leakage: f64, limit: f64 },

    /// A matrix kernel failed the Hermiticity tolerance.
    #[error("kernel not Hermitian: max deviation {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    /// A density matrix failed the trace or positivity requirement.
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    /// A measurement setting is degenerate or out of range.
    #[error("invalid setting: {0}")]
    InvalidSetting(String),

    /// A rate record is malformed or statistically impossible.
    #[error("invalid rate record: {0}")]
    InvalidRecord(String),

    /// A record is inconsistent with the rest of the data set.
    #[error("inconsistent record: {0}")]
    InconsistentRecord(String),

    /// A reconstruction schedule is malformed.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// A probability left [0, 1].
    #[error("probability {value} outside [0, 1]")]
    InvalidProbability { value: f64 },

    /// Bad parameters for a model or plan.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, HomtomoError>;
