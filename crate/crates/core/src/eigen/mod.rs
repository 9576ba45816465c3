//! Smallest eigenpairs of sparse symmetric operators.
//!
//! Two operators matter to the solver: the matrix `A` itself and the bordered
//! matrix
//!
//! ```text
//!            [ t      -g^T ]
//! D(t, l) =  [ -g      A   ]      g = a - (l/2) b
//! ```
//!
//! which is only ever touched through products. Small instances take a dense
//! route: `A` is diagonalized once and `D(t, l)` becomes an arrowhead matrix in
//! that eigenbasis, whose smallest eigenpairs follow from a secular equation.
//! Larger instances use block Lanczos with full reorthogonalization and thick
//! restarts.

mod arrow;
pub(crate) mod dense;
mod lanczos;


pub use dense::DenseSpectrum;

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::sparse::{dot, SymmetricOperator};

/// Tolerances and sizing for every eigensolve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EigConfig {
    /// Relative residual target `||Mv - value v|| <= tol_eig * max(1, |value|)`.
    pub tol_eig: f64,
    /// Ritz values within `tol_cluster * max(1, |value|)` count as one cluster.
    pub tol_cluster: f64,
    /// First components below this are treated as zero.
    pub tol_anchor: f64,
    /// Instances with `n` at or below this use the dense route.
    pub dense_threshold: usize,
    /// Seed for the pseudo-random Lanczos starting block.
    pub seed: u64,
    pub max_restarts: usize,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self {
            tol_eig: 1e-10,
            tol_cluster: 1e-8,
            tol_anchor: 1e-6,
            dense_threshold: 400,
            seed: 0x5eed_e165,
            max_restarts: 200,
        }
    }
}

impl EigConfig {
    pub(crate) fn cluster_width(&self, value: f64) -> f64 {
        self.tol_cluster * value.abs().max(1.0)
    }
}

/// The smallest eigenvalue of an operator together with an orthonormal basis
/// of its (numerically clustered) eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub value: f64,
    pub multiplicity: usize,
    pub basis: Vec<Vec<f64>>,
    /// Index into `basis` of the one vector with a non-negligible first
    /// component. Only set by [`anchor_basis`].
    pub anchored: Option<usize>,
    /// Smallest eigenvalue outside the cluster, when known.
    pub next_value: Option<f64>,
    /// Operator products spent producing this result.
    pub matvecs: usize,
}

impl EigResult {
    /// Distance from the cluster to the next eigenvalue.
    pub fn gap(&self) -> Option<f64> {
        self.next_value.map(|v| v - self.value)
    }

    pub fn anchored_vector(&self) -> Option<&[f64]> {
        self.anchored.map(|k| self.basis[k].as_slice())
    }
}

/// `D(t, lambda)` for an instance, applied without forming it.
pub struct BorderedOperator<'a> {
    pub base: &'a ProblemInstance,
    pub t: f64,
    pub lambda: f64,
    border: Vec<f64>,
}

impl<'a> BorderedOperator<'a> {
    pub fn new(base: &'a ProblemInstance, t: f64, lambda: f64) -> Self {
        let border = base
            .a
            .iter()
            .zip(&base.b)
            .map(|(a, b)| -a + 0.5 * lambda * b)
            .collect();
        Self {
            base,
            t,
            lambda,
            border,
        }
    }

    /// The off-diagonal block `-a + (lambda/2) b`.
    pub fn border(&self) -> &[f64] {
        &self.border
    }
}

impl SymmetricOperator for BorderedOperator<'_> {
    fn dim(&self) -> usize {
        self.base.n() + 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (y0, z) = (x[0], &x[1..]);
        let (out0, out) = y.split_at_mut(1);
        self.base.matrix.matvec(z, out);
        for (o, g) in out.iter_mut().zip(&self.border) {
            *o += y0 * g;
        }
        out0[0] = self.t * y0 + dot(&self.border, z);
    }
}

/// Smallest eigenvalue, cluster multiplicity and cluster basis of `op`.
///
/// `k_hint` sizes the Lanczos block (at least 2). `warm` vectors, if any, seed
/// the starting block. Deterministic for a fixed `cfg.seed`.
pub fn smallest_eigpair(
    op: &dyn SymmetricOperator,
    k_hint: usize,
    cfg: &EigConfig,
    warm: &[&[f64]],
) -> Result<EigResult> {
    if op.dim() == 0 {
        return Err(Error::Dimension("operator of dimension 0".into()));
    }
    if op.dim() <= cfg.dense_threshold {
        return Ok(dense::smallest_dense(&op.to_dense(), cfg));
    }
    lanczos::smallest_with_multiplicity(op, k_hint.max(2), cfg, warm)
}

/// Smallest eigenpair of `D(t, lambda)`. Uses the cached spectrum of `A` when
/// the instance is small enough for the dense route.
pub fn bordered_smallest(
    inst: &ProblemInstance,
    t: f64,
    lambda: f64,
    cfg: &EigConfig,
    warm: &[&[f64]],
) -> Result<EigResult> {
    if inst.n() <= cfg.dense_threshold {
        let spec = inst.dense_spectrum()?;
        return Ok(arrow::bordered_smallest(spec, t, lambda, cfg));
    }
    let op = BorderedOperator::new(inst, t, lambda);
    lanczos::smallest_with_multiplicity(&op, 2, cfg, warm)
}

/// Smallest eigenvalue of `A`, its multiplicity and eigenbasis. Computed once
/// per instance and cached; later calls return the cached value regardless of
/// `cfg`.
pub fn smallest_eig_a<'a>(inst: &'a ProblemInstance, cfg: &EigConfig) -> Result<&'a EigResult> {
    inst.cached_min_eig(|| {
        if inst.n() <= cfg.dense_threshold {
            let spec = inst.dense_spectrum()?;
            Ok(spec.smallest(cfg))
        } else {
            lanczos::smallest_with_multiplicity(&inst.matrix, 3, cfg, &[])
        }
    })
}

/// Rotates the cluster basis so that at most one vector has a first component
/// above `tol_anchor` and records its index.
///
/// The rotation is a Householder reflection acting on the coefficient space
/// of the cluster, chosen to map the vector of first components onto a
/// multiple of the first unit vector. The anchored vector ends up first with
/// a positive first component.
pub fn anchor_basis(mut result: EigResult, tol_anchor: f64) -> EigResult {
    let k = result.basis.len();
    if k == 0 {
        result.anchored = None;
        return result;
    }
    let firsts: Vec<f64> = result.basis.iter().map(|v| v[0]).collect();
    let norm = firsts.iter().map(|f| f * f).sum::<f64>().sqrt();
    if norm < tol_anchor {
        result.anchored = None;
        return result;
    }
    if k > 1 {
        // Householder vector u with (I - 2uu^T/u^Tu) f = -sign(f0) |f| e1.
        let mut u = firsts.clone();
        let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
        u[0] += sign * norm;
        let uu = dot(&u, &u);
        let dim = result.basis[0].len();
        let mut rotated = vec![vec![0.0; dim]; k];
        for (j, out) in rotated.iter_mut().enumerate() {
            for (i, v) in result.basis.iter().enumerate() {
                let h = if i == j { 1.0 } else { 0.0 } - 2.0 * u[i] * u[j] / uu;
                if h != 0.0 {
                    for (o, vi) in out.iter_mut().zip(v) {
                        *o += h * vi;
                    }
                }
            }
        }
        // Columns 2..k of the reflector are orthogonal to f, so their first
        // components vanish up to rounding; clear them.
        for v in rotated.iter_mut().skip(1) {
            v[0] = 0.0;
        }
        result.basis = rotated;
    }
    if result.basis[0][0] < 0.0 {
        for x in result.basis[0].iter_mut() {
            *x = -*x;
        }
    }
    result.anchored = Some(0);
    result
}

/// Largest entry of `|P1 - P2|` for the orthogonal projectors onto the spans
/// of two orthonormal bases.
pub fn projector_distance(b1: &[Vec<f64>], b2: &[Vec<f64>]) -> f64 {
    let dim = b1.first().or(b2.first()).map_or(0, |v| v.len());
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let p1: f64 = b1.iter().map(|v| v[i] * v[j]).sum();
            let p2: f64 = b2.iter().map(|v| v[i] * v[j]).sum();
            worst = worst.max((p1 - p2).abs());
        }
    }
    worst
}
