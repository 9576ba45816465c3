//! The instance `min x^T A x - 2 a^T x  s.t. ||x||^2 <= delta, b^T x <= c`,
//! its standing assumptions and KKT residuals.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::eigen::{self, DenseSpectrum, EigConfig, EigResult};
use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, norm_inf, CsrMatrix};

/// Problem data plus lazily computed spectral information about `A`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub matrix: CsrMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub delta: f64,
    spectrum: OnceLock<DenseSpectrum>,
    min_eig: OnceLock<EigResult>,
}

impl ProblemInstance {
    pub fn new(matrix: CsrMatrix, a: Vec<f64>, b: Vec<f64>, c: f64, delta: f64) -> Result<Self> {
        let n = matrix.n();
        if n == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if a.len() != n || b.len() != n {
            return Err(Error::Dimension(format!(
                "matrix is {n}x{n} but a has {} entries and b has {}",
                a.len(),
                b.len()
            )));
        }
        Ok(Self {
            matrix,
            a,
            b,
            c,
            delta,
            spectrum: OnceLock::new(),
            min_eig: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// `x^T A x - 2 a^T x`
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.matrix.matvec(x, &mut ax);
        dot(x, &ax) - 2.0 * dot(&self.a, x)
    }

    pub fn ball_tolerance(&self) -> f64 {
        1e-8 * self.delta.max(1.0)
    }

    pub fn linear_tolerance(&self) -> f64 {
        1e-8 * self.c.abs().max(1.0)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        dot(x, x) - self.delta <= self.ball_tolerance()
            && dot(&self.b, x) - self.c <= self.linear_tolerance()
    }

    /// Magnitude used to turn relative tolerances into absolute ones.
    pub fn scale(&self) -> f64 {
        let a = norm2(&self.a);
        let b = norm2(&self.b);
        1.0f64
            .max(self.matrix.norm_inf() * self.delta)
            .max(a * self.delta.sqrt())
            .max(b * self.delta.sqrt())
            .max(self.c.abs())
    }

    /// Full eigendecomposition of `A`, computed once. Only sensible for small
    /// `n`.
    pub fn dense_spectrum(&self) -> Result<&DenseSpectrum> {
        Ok(self
            .spectrum
            .get_or_init(|| DenseSpectrum::new(&self.matrix, &self.a, &self.b)))
    }

    pub(crate) fn cached_min_eig(
        &self,
        compute: impl FnOnce() -> Result<EigResult>,
    ) -> Result<&EigResult> {
        if let Some(r) = self.min_eig.get() {
            return Ok(r);
        }
        let r = compute()?;
        Ok(self.min_eig.get_or_init(|| r))
    }

    /// Same problem after the symmetric permutation `x_new[i] = x_old[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self::new(
            self.matrix.permuted(perm),
            pick(&self.a),
            pick(&self.b),
            self.c,
            self.delta,
        )
    }
}

/// One violated standing assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    AsymmetricStorage,
    NonPositiveDelta { delta: f64 },
    NonFinite,
    SlaterFailure { min_linear: f64, c: f64 },
    PositiveDefinite { lambda_min: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AsymmetricStorage => write!(f, "matrix storage is not symmetric"),
            Violation::NonPositiveDelta { .. } => write!(f, "delta must be positive"),
            Violation::NonFinite => write!(f, "data contains non-finite values"),
            Violation::SlaterFailure { min_linear, c } => write!(
                f,
                "Slater condition fails: min over the ball of b^T x is {min_linear:e}, not below c = {c:e}"
            ),
            Violation::PositiveDefinite { lambda_min } => {
                write!(f, "A is positive definite (lambda_min = {lambda_min:e})")
            }
        }
    }
}

/// Outcome of [`validate`]. Empty with `pending_eigen_check == false` means
/// the instance is accepted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Set when the definiteness test has not been run yet.
    pub pending_eigen_check: bool,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks everything except definiteness of `A`.
pub fn validate_structure(inst: &ProblemInstance) -> ValidationReport {
    let mut violations = Vec::new();
    if !inst.matrix.is_symmetric() {
        violations.push(Violation::AsymmetricStorage);
    }
    let finite = inst.c.is_finite()
        && inst.delta.is_finite()
        && inst.a.iter().chain(&inst.b).all(|v| v.is_finite())
        && inst.matrix.lower_triplets().iter().all(|e| e.2.is_finite());
    if !finite {
        violations.push(Violation::NonFinite);
    }
    if inst.delta.is_nan() || inst.delta <= 0.0 {
        violations.push(Violation::NonPositiveDelta { delta: inst.delta });
    } else {
        let min_linear = -norm2(&inst.b) * inst.delta.sqrt();
        if inst.c.is_nan() || min_linear >= inst.c {
            violations.push(Violation::SlaterFailure {
                min_linear,
                c: inst.c,
            });
        }
    }
    ValidationReport {
        violations,
        pending_eigen_check: true,
    }
}

/// Full validation, including the definiteness test through the cached
/// smallest eigenvalue of `A`.
pub fn validate(inst: &ProblemInstance, cfg: &EigConfig) -> Result<ValidationReport> {
    let mut report = validate_structure(inst);
    if !report.is_ok() {
        return Ok(report);
    }
    let lambda_min = eigen::smallest_eig_a(inst, cfg)?.value;
    if lambda_min > pd_threshold(inst) {
        report
            .violations
            .push(Violation::PositiveDefinite { lambda_min });
    }
    report.pending_eigen_check = false;
    Ok(report)
}

/// `lambda_min(A)` above this rejects the instance.
pub fn pd_threshold(inst: &ProblemInstance) -> f64 {
    1e-10 * inst.matrix.norm_inf().max(1.0)
}

/// Stationarity, complementarity and feasibility at a primal-dual triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||(A + l1 I) x - (a - (l2/2) b)||_inf`
    pub kkt1: f64,
    /// `l1 (||x||^2 - delta)`
    pub kkt2: f64,
    /// `l2 (b^T x - c)`
    pub kkt3: f64,
    /// `||x||^2 - delta`
    pub primal_ball: f64,
    /// `b^T x - c`
    pub primal_lin: f64,
}

impl KktResiduals {
    /// Worst of the three residuals, each relative to its scale.
    pub fn worst_relative(&self, inst: &ProblemInstance) -> f64 {
        (self.kkt1 / norm_inf(&inst.a).max(1.0))
            .max(self.kkt2.abs() / inst.delta.max(1.0))
            .max(self.kkt3.abs() / inst.c.abs().max(1.0))
    }
}

pub fn kkt_residuals(
    inst: &ProblemInstance,
    x: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<KktResiduals> {
    let n = inst.n();
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "x has {} entries, expected {n}",
            x.len()
        )));
    }
    let mut r = vec![0.0; n];
    inst.matrix.matvec(x, &mut r);
    for i in 0..n {
        r[i] += lambda1 * x[i] - (inst.a[i] - 0.5 * lambda2 * inst.b[i]);
    }
    let primal_ball = dot(x, x) - inst.delta;
    let primal_lin = dot(&inst.b, x) - inst.c;
    Ok(KktResiduals {
        kkt1: norm_inf(&r),
        kkt2: lambda1 * primal_ball,
        kkt3: lambda2 * primal_lin,
        primal_ball,
        primal_lin,
    })
}
