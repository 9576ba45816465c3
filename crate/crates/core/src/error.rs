use thiserror::Error;

use crate::problem::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix sizes that do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The instance violates one of the standing assumptions.
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),

    /// The iterative eigensolver ran out of restarts.
    #[error(
        "eigensolver did not converge after {restarts} restarts \
         (best estimate {best_value:e}, residual {residual:e})"
    )]
    EigenNoConvergence {
        best_value: f64,
        residual: f64,
        restarts: usize,
    },

    /// Conjugate gradients on the deflated shifted matrix stalled.
    #[error("pseudo-inverse solve did not converge (relative residual {residual:e})")]
    PseudoInverse { residual: f64 },

    /// The t-maximization could not bracket a root of its derivative.
    #[error("no bracket for the t-maximization within {expansions} expansions")]
    Bracket { expansions: usize },

    /// A state that the theory rules out was reached numerically.
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    /// The dense reference solver refuses large instances.
    #[error("instance of size {n} exceeds the dense oracle cap {cap}")]
    OracleCap { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
