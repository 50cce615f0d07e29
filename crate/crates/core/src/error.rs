use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = QcsbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QcsbError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix function is not finite at x eigenvalue {eigenvalue} (x^2 = {argument})")]
    Domain { eigenvalue: f64, argument: f64 },

    #[error("Fock cutoff {dim} too small: captured norm {captured:.6} < {required}")]
    Truncation {
        dim: usize,
        captured: f64,
        required: f64,
    },

    #[error("negative spin population {value:e} in sector {sector}")]
    NegativePopulation { sector: usize, value: f64 },

    #[error(
        "step size underflow at t = {t} (h = {h:e}); the generator is too stiff for this \
         tolerance, try a larger tol or smaller gamma*N"
    )]
    Stiffness {
        t: f64,
        h: f64,
        partial: Option<Box<Trajectory>>,
    },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite {
        t: f64,
        partial: Option<Box<Trajectory>>,
    },

    #[error("{0} diverges: {1}")]
    Divergent(&'static str, String),

    #[error("too large for brute force: {0}")]
    TooLarge(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    FitNonConvergence { iterations: usize, residual: f64 },

    #[error("relaxation rate is not monotone in energy near {0:e} J; bisection invalid")]
    NonMonotone(f64),

    #[error("unstable: softening {softening:e} exceeds bare stiffness {stiffness:e}")]
    Unstable { softening: f64, stiffness: f64 },

    #[error("quadrature did not converge: estimate {estimate:e} +/- {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },

    #[error("malformed data: {0}")]
    Parse(String),
}

impl QcsbError {
    /// Trajectory recorded before an integration failure, if any.
    pub fn partial_trajectory(&self) -> Option<&Trajectory> {
        match self {
            QcsbError::Stiffness { partial, .. } | QcsbError::NonFinite { partial, .. } => partial.as_deref(),
            _ => None,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QcsbError::InvalidArgument(msg.into())
    }
}
