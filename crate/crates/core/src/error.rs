//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by chart conversions, field evaluations, integrators and searches.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The state sits on (or numerically at) a singularity of the requested chart.
    #[error("singular chart: {0}")]
    SingularChart(String),
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A collision-chart state is inconsistent with the requested energy level.
    #[error("energy mismatch: residual {residual:e} exceeds tolerance {tol:e}")]
    EnergyMismatch {
        /// Absolute residual of the energy relation.
        residual: f64,
        /// Tolerance that was exceeded.
        tol: f64,
    },
    /// A parameter violates its documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A numerical procedure failed to converge or produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A search finished without locating the requested object.
    #[error("not found: {0}")]
    NotFound(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
