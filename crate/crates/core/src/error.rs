use thiserror::Error;

use crate::solver::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid spline specification: {0}")]
    InvalidSpline(String),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("unsupported Gauss-Legendre order {0} (supported: 1..=64)")]
    UnsupportedOrder(usize),

    #[error("weight is singular at {point:?}")]
    SingularWeight { point: Vec<f64> },

    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },

    #[error("{what} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("Lyapunov operator is singular: min |λi + λj| = {min_gap:e}")]
    SpectralOverlap { min_gap: f64 },

    #[error("real Schur decomposition did not converge")]
    SchurFailure,

    #[error("no stabilizing initial gain found: {0}")]
    NotStabilizable(String),

    #[error("Riccati iteration stagnated after {iterations} steps (residual {residual:e})")]
    RiccatiStagnation { iterations: usize, residual: f64 },

    #[error("closed loop is not Hurwitz at damping {theta:e} (abscissa {abscissa:e}); unstabilizable at this discretization")]
    Unstabilizable { theta: f64, abscissa: f64 },

    #[error("no convergence after {} iterations (last change {:e})", .trace.len(), .trace.last_change())]
    NonConvergence { trace: SolveTrace },

    #[error("too few modes: need at least {needed}, have {have}")]
    TooFewModes { needed: usize, have: usize },

    #[error("step size underflow at t = {t:e}")]
    StepSizeUnderflow { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
