//! Compressed sparse row storage for symmetric matrices and the operator trait
//! every eigensolve in the crate is written against.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rows per task when the `parallel` feature splits a matvec.
#[cfg(feature = "parallel")]
const PAR_ROW_CHUNK: usize = 4096;

/// Below this many stored entries a matvec always runs sequentially.
#[cfg(feature = "parallel")]
const PAR_MIN_NNZ: usize = 200_000;

/// A real symmetric linear operator accessed only through products.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// `y <- M x`. Both slices have length `dim()`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Materializes the operator column by column. Only meant for small sizes.
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        // Symmetrize away rounding in the products.
        let t = out.transpose();
        (out + t) * 0.5
    }
}

/// Square matrix in CSR form with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a symmetric matrix from one triangle. Each `(i, j, v)` sets both
    /// `A[i,j]` and `A[j,i]`; duplicates are summed. Explicit zeros are kept so
    /// that the stored pattern survives a write/read cycle.
    pub fn from_triangle(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut full = Vec::with_capacity(entries.len() * 2);
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        Ok(Self::assemble(n, full))
    }

    /// Builds a matrix from explicit entries of both triangles with no
    /// symmetrization. Used to represent (and reject) asymmetric input.
    pub fn from_full_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::Dimension(format!(
                "entry ({i}, {j}) outside a {n}x{n} matrix"
            )));
        }
        Ok(Self::assemble(n, entries.to_vec()))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let entries: Vec<_> = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::assemble(diag.len(), entries)
    }

    /// Keeps every entry with `|a_ij| > 0` of the lower triangle of a dense
    /// symmetric matrix.
    pub fn from_dense_lower(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut entries = Vec::new();
        for j in 0..n {
            for i in j..n {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self::from_triangle(n, &entries)
    }

    fn assemble(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (both triangles).
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Lower-triangle entries `(i, j, v)` with `i >= j`, row-major.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| {
                self.row(i)
                    .filter(move |&(j, _)| j <= i)
                    .map(move |(j, v)| (i, j, v))
            })
            .collect()
    }

    /// True when every stored entry has a bitwise-equal mirror.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i).all(|(j, v)| {
                let span = self.row_ptr[j]..self.row_ptr[j + 1];
                match self.col_idx[span.clone()].binary_search(&i) {
                    Ok(k) => self.values[span.start + k] == v,
                    Err(_) => v == 0.0,
                }
            })
        })
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Returns `P A P^T` where row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut inverse = vec![0usize; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let entries: Vec<_> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (inverse[i], inverse[j], v))
            .collect();
        Self::assemble(self.n, entries)
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut entries: Vec<_> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect();
        entries.extend((0..self.n).map(|i| (i, i, shift)));
        Self::assemble(self.n, entries)
    }

    pub fn to_dense_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&j, &v)| v * x[j])
            .sum()
    }

    /// `y <- A x`, sequential.
    pub fn matvec_seq(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_dot(i, x);
        }
    }

    /// `y <- A x`, split over row blocks.
    #[cfg(feature = "parallel")]
    pub fn matvec_par(&self, x: &[f64], y: &mut [f64]) {
        use rayon::prelude::*;
        y.par_chunks_mut(PAR_ROW_CHUNK)
            .enumerate()
            .for_each(|(block, chunk)| {
                let base = block * PAR_ROW_CHUNK;
                for (k, yi) in chunk.iter_mut().enumerate() {
                    *yi = self.row_dot(base + k, x);
                }
            });
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        #[cfg(feature = "parallel")]
        if self.nnz() >= PAR_MIN_NNZ && rayon::current_num_threads() > 1 {
            return self.matvec_par(x, y);
        }
        self.matvec_seq(x, y)
    }
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.to_dense_matrix()
    }
}

/// Dense symmetric matrix viewed as an operator.
impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..n).map(|j| self[(i, j)] * x[j]).sum();
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn scale(alpha: f64, x: &mut [f64]) {
    for v in x {
        *v *= alpha;
    }
}
