//! Global solver for the trust-region subproblem with one extra linear
//! inequality,
//!
//! ```text
//! minimize    x^T A x - 2 a^T x
//! subject to  ||x||^2 <= delta,  b^T x <= c,
//! ```
//!
//! with `A` sparse, symmetric and not positive definite. The Lagrangian dual
//! is written as the maximization of
//!
//! ```text
//! k(t, l) = (delta + 1) lambda_min(D(t, l)) - t - l c
//! ```
//!
//! over `t` and `l >= 0`, where `D(t, l)` borders `A` with `-a + (l/2) b`.
//! The dual is maximized by alternating exact coordinate steps, after which a
//! primal solution is read off the eigenvector of `D` or, when no zero-gap
//! solution exists, a certificate of the gap is returned with the dual value
//! as a lower bound.
//!
//! ```
//! use etrs_core::{solve, CsrMatrix, ProblemInstance, SolveConfig, Status};
//!
//! let inst = ProblemInstance::new(
//!     CsrMatrix::from_diagonal(&[-2.0, 1.0]),
//!     vec![0.0, 0.0],
//!     vec![1.0, 0.0],
//!     0.0,
//!     1.0,
//! )
//! .unwrap();
//! let report = solve(&inst, &SolveConfig::default()).unwrap();
//! assert_eq!(report.status, Status::Solved);
//! assert!((report.objective + 2.0).abs() < 1e-9);
//! ```

pub mod batch;
pub mod dual;
pub mod eigen;
pub mod error;
pub mod instances;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod recovery;
pub mod sparse;
pub mod trs;

pub use dual::{solve_dual, DualConfig, DualResult};
pub use eigen::{EigConfig, EigResult};
pub use error::{Error, Result};
pub use problem::{kkt_residuals, validate, KktResiduals, ProblemInstance, ValidationReport};
pub use recovery::{solve, GapCertificate, SolveConfig, SolveReport, Status};
pub use sparse::{CsrMatrix, SymmetricOperator};
