use nalgebra::{DMatrix, SymmetricEigen};

use super::{EigConfig, EigResult};
use crate::sparse::CsrMatrix;

/// Full eigendecomposition of a small `A`, with `a` and `b` expressed in the
/// eigenbasis. Eigenvalues ascend.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`.
    pub vectors: DMatrix<f64>,
    /// `Q^T a`
    pub qa: Vec<f64>,
    /// `Q^T b`
    pub qb: Vec<f64>,
}

impl DenseSpectrum {
    pub fn new(matrix: &CsrMatrix, a: &[f64], b: &[f64]) -> Self {
        let (values, vectors) = sorted_eigen(matrix.to_dense_matrix());
        let qa = vectors.tr_mul(&nalgebra::DVector::from_column_slice(a));
        let qb = vectors.tr_mul(&nalgebra::DVector::from_column_slice(b));
        Self {
            values,
            vectors,
            qa: qa.as_slice().to_vec(),
            qb: qb.as_slice().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Coordinates of `g = a - (lambda/2) b` in the eigenbasis.
    pub fn g_coords(&self, lambda: f64) -> Vec<f64> {
        self.qa
            .iter()
            .zip(&self.qb)
            .map(|(a, b)| a - 0.5 * lambda * b)
            .collect()
    }

    /// `Q y`
    pub fn to_original(&self, coords: &[f64]) -> Vec<f64> {
        let y = nalgebra::DVector::from_column_slice(coords);
        (&self.vectors * y).as_slice().to_vec()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j).iter().copied().collect()
    }

    /// Number of leading eigenvalues within the cluster width of the minimum.
    pub fn min_multiplicity(&self, cfg: &EigConfig) -> usize {
        let lo = self.values[0];
        let width = cfg.cluster_width(lo);
        self.values.iter().take_while(|&&v| v - lo <= width).count()
    }

    pub fn smallest(&self, cfg: &EigConfig) -> EigResult {
        let mult = self.min_multiplicity(cfg);
        EigResult {
            value: self.values[0],
            multiplicity: mult,
            basis: (0..mult).map(|j| self.column(j)).collect(),
            anchored: None,
            next_value: self.values.get(mult).copied(),
            matvecs: 0,
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// The QR result is polished by Jacobi sweeps on `Q^T M Q`. The QR step can
/// return eigenvectors with residuals far above rounding level when a 2x2
/// block is nearly decoupled; Jacobi on the almost diagonal matrix fixes that
/// in one or two sweeps. Inside large degenerate eigenspaces the QR vectors
/// can also lose orthogonality, so they are re-orthonormalized first. The QR
/// step returns NaN on some matrices with many zero rows; Jacobi then runs
/// from scratch.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let (mut b, mut q) = if eig.eigenvectors.iter().all(|v| v.is_finite()) {
        let mut q = eig.eigenvectors;
        let drift = (q.tr_mul(&q) - DMatrix::identity(n, n)).amax();
        if drift > 1e-13 {
            q = q.qr().q();
        }
        (q.tr_mul(&(&m * &q)), q)
    } else {
        (m, DMatrix::identity(n, n))
    };
    jacobi(&mut b, &mut q, 100);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]));
    let values = order.iter().map(|&i| b[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &q.column(src));
    }
    (values, vectors)
}

/// Cyclic Jacobi on a nearly diagonal symmetric `b`, accumulating the
/// rotations into the columns of `q`.
fn jacobi(b: &mut DMatrix<f64>, q: &mut DMatrix<f64>, max_sweeps: usize) {
    let n = b.nrows();
    let big = b.amax();
    if big == 0.0 {
        return;
    }
    // Entries at rounding level of the product are left alone.
    let floor = 1e-14 * big;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for r in p + 1..n {
                let bpr = 0.5 * (b[(p, r)] + b[(r, p)]);
                if bpr.abs() <= floor {
                    continue;
                }
                rotated = true;
                let theta = (b[(r, r)] - b[(p, p)]) / (2.0 * bpr);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let (bkp, bkr) = (b[(k, p)], b[(k, r)]);
                    b[(k, p)] = c * bkp - s * bkr;
                    b[(k, r)] = s * bkp + c * bkr;
                }
                for k in 0..n {
                    let (bpk, brk) = (b[(p, k)], b[(r, k)]);
                    b[(p, k)] = c * bpk - s * brk;
                    b[(r, k)] = s * bpk + c * brk;
                }
                b[(p, r)] = 0.0;
                b[(r, p)] = 0.0;
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

pub(crate) fn smallest_dense(m: &DMatrix<f64>, cfg: &EigConfig) -> EigResult {
    let (values, vectors) = sorted_eigen(m.clone());
    let lo = values[0];
    let width = cfg.cluster_width(lo);
    let mult = values.iter().take_while(|&&v| v - lo <= width).count();
    EigResult {
        value: lo,
        multiplicity: mult,
        basis: (0..mult)
            .map(|j| vectors.column(j).iter().copied().collect())
            .collect(),
        anchored: None,
        next_value: values.get(mult).copied(),
        matvecs: 0,
    }
}
