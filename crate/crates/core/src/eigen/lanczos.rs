//! Block Lanczos with full reorthogonalization and thick restarts.
//!
//! The Krylov basis `V` and its image `W = M V` are stored explicitly, so the
//! projected matrix `T = V^T W` is built entry by entry and Rayleigh-Ritz is
//! exact for the current subspace. The next block is the image of the last
//! block orthogonalized against `V`, which needs no extra product. When the
//! basis reaches its cap, the lowest Ritz vectors are kept and the residuals
//! of the lowest `p` of them seed the next block.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dense::sorted_eigen;
use super::{EigConfig, EigResult};
use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, scale, SymmetricOperator};

struct Subspace<'a> {
    op: &'a dyn SymmetricOperator,
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    matvecs: usize,
}

impl<'a> Subspace<'a> {
    fn new(op: &'a dyn SymmetricOperator) -> Self {
        Self {
            op,
            v: Vec::new(),
            w: Vec::new(),
            t: Vec::new(),
            matvecs: 0,
        }
    }

    fn len(&self) -> usize {
        self.v.len()
    }

    /// Appends an orthonormal vector and its image.
    fn push(&mut self, x: Vec<f64>) {
        let mut y = vec![0.0; x.len()];
        self.op.apply(&x, &mut y);
        self.matvecs += 1;
        self.push_with_image(x, y);
    }

    fn push_with_image(&mut self, x: Vec<f64>, y: Vec<f64>) {
        let m = self.v.len();
        let mut col: Vec<f64> = self.v.iter().map(|v| dot(v, &y)).collect();
        col.push(dot(&x, &y));
        for (i, row) in self.t.iter_mut().enumerate() {
            // Average with the transposed entry to keep T symmetric.
            let sym = 0.5 * (col[i] + dot(&x, &self.w[i]));
            col[i] = sym;
            row.push(sym);
        }
        self.t.push(col);
        debug_assert_eq!(self.t[m].len(), m + 1);
        self.v.push(x);
        self.w.push(y);
    }

    fn projected(&self) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| self.t[i][j])
    }

    /// `V s` and `W s`.
    fn combine(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.op.dim();
        let mut u = vec![0.0; n];
        let mut mu = vec![0.0; n];
        for (k, &sk) in s.iter().enumerate() {
            if sk != 0.0 {
                axpy(sk, &self.v[k], &mut u);
                axpy(sk, &self.w[k], &mut mu);
            }
        }
        (u, mu)
    }

    /// Two passes of classical Gram-Schmidt against the basis and `extra`.
    fn orthogonalize(&self, x: &mut [f64], extra: &[Vec<f64>]) {
        for _ in 0..2 {
            let h: Vec<f64> = self.v.iter().map(|v| dot(v, x)).collect();
            for (hk, v) in h.iter().zip(&self.v) {
                axpy(-hk, v, x);
            }
            for e in extra {
                let h = dot(e, x);
                axpy(-h, e, x);
            }
        }
    }
}

struct RitzPair {
    value: f64,
    vector: Vec<f64>,
    image: Vec<f64>,
    residual: f64,
}

fn ritz_pair(sub: &Subspace, values: &[f64], vecs: &DMatrix<f64>, k: usize) -> RitzPair {
    let s: Vec<f64> = vecs.column(k).iter().copied().collect();
    let (vector, image) = sub.combine(&s);
    let theta = values[k];
    let residual = image
        .iter()
        .zip(&vector)
        .map(|(y, x)| (y - theta * x).powi(2))
        .sum::<f64>()
        .sqrt();
    RitzPair {
        value: theta,
        vector,
        image,
        residual,
    }
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Orthonormalizes candidates against the subspace and each other, replacing
/// those that collapse with random directions. Returns at most `want`
/// vectors, fewer only when the space is exhausted.
fn next_block(
    sub: &Subspace,
    candidates: Vec<Vec<f64>>,
    want: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = sub.op.dim();
    let room = n - sub.len();
    let want = want.min(room);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(want);
    let mut pool = candidates.into_iter();
    let mut random_tries = 0;
    while out.len() < want {
        let mut x = match pool.next() {
            Some(x) => x,
            None => {
                random_tries += 1;
                if random_tries > 4 * want + 8 {
                    break;
                }
                random_vector(rng, n)
            }
        };
        let before = norm2(&x);
        if before == 0.0 || !before.is_finite() {
            continue;
        }
        sub.orthogonalize(&mut x, &out);
        let after = norm2(&x);
        if after > 1e-8 * before {
            scale(1.0 / after, &mut x);
            out.push(x);
        }
    }
    out
}

/// One block Lanczos run with fixed block size `p`.
fn run(
    op: &dyn SymmetricOperator,
    p: usize,
    cfg: &EigConfig,
    seeds: &[Vec<f64>],
) -> Result<(EigResult, Vec<f64>)> {
    let n = op.dim();
    let cap = n.min((8 * p).max(48));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sub = Subspace::new(op);
    let mut block = next_block(&sub, seeds.to_vec(), p, &mut rng);
    let mut restarts = 0;
    let mut best = (f64::NAN, f64::INFINITY);

    loop {
        let mut images = Vec::with_capacity(block.len());
        for x in block {
            sub.push(x);
            images.push(sub.w.last().unwrap().clone());
        }
        let m = sub.len();
        let (values, vecs) = sorted_eigen(sub.projected());
        let lo = values[0];
        let threshold = lo + cfg.cluster_width(lo);
        let cluster = values.iter().take_while(|&&v| v <= threshold).count();

        let full = m == n;
        if m >= (2 * p).min(n) {
            let pairs: Vec<RitzPair> = (0..(cluster + 1).min(m))
                .map(|k| ritz_pair(&sub, &values, &vecs, k))
                .collect();
            let worst = pairs[..cluster]
                .iter()
                .map(|r| r.residual / r.value.abs().max(1.0))
                .fold(0.0, f64::max);
            if worst < best.1 {
                best = (lo, worst);
            }
            let cluster_ok = worst <= cfg.tol_eig;
            let next_ok = match pairs.get(cluster) {
                None => true,
                Some(r) => {
                    r.residual <= cfg.tol_eig * r.value.abs().max(1.0)
                        || r.residual <= 0.1 * (r.value - threshold)
                }
            };
            if full || (cluster_ok && next_ok) {
                let next_value = pairs.get(cluster).map(|r| r.value);
                let residual = worst;
                let basis = pairs.into_iter().take(cluster).map(|r| r.vector).collect();
                return Ok((
                    EigResult {
                        value: lo,
                        multiplicity: cluster,
                        basis,
                        anchored: None,
                        next_value,
                        matvecs: sub.matvecs,
                    },
                    vec![residual],
                ));
            }
        }

        if m + p > cap {
            restarts += 1;
            if restarts > cfg.max_restarts {
                return Err(Error::EigenNoConvergence {
                    best_value: best.0,
                    residual: best.1,
                    restarts: cfg.max_restarts,
                });
            }
            let keep = (cap / 2).max(cluster + 1).max(p).min(m).min(cap - p);
            let pairs: Vec<RitzPair> = (0..keep)
                .map(|k| ritz_pair(&sub, &values, &vecs, k))
                .collect();
            let residuals: Vec<Vec<f64>> = pairs
                .iter()
                .take(p)
                .map(|r| {
                    r.image
                        .iter()
                        .zip(&r.vector)
                        .map(|(y, x)| y - r.value * x)
                        .collect()
                })
                .collect();
            let matvecs = sub.matvecs;
            sub = Subspace::new(op);
            sub.matvecs = matvecs;
            for r in pairs {
                let (x, y) = (r.vector, r.image);
                sub.push_with_image(x, y);
            }
            block = next_block(&sub, residuals, p, &mut rng);
        } else {
            block = next_block(&sub, images, p, &mut rng);
        }
        if block.is_empty() {
            // The basis spans an invariant subspace; force a final check.
            let (values, vecs) = sorted_eigen(sub.projected());
            let lo = values[0];
            let threshold = lo + cfg.cluster_width(lo);
            let cluster = values.iter().take_while(|&&v| v <= threshold).count();
            let pairs: Vec<RitzPair> = (0..(cluster + 1).min(sub.len()))
                .map(|k| ritz_pair(&sub, &values, &vecs, k))
                .collect();
            let next_value = pairs.get(cluster).map(|r| r.value);
            return Ok((
                EigResult {
                    value: lo,
                    multiplicity: cluster,
                    basis: pairs.into_iter().take(cluster).map(|r| r.vector).collect(),
                    anchored: None,
                    next_value,
                    matvecs: sub.matvecs,
                },
                vec![],
            ));
        }
    }
}

/// Smallest eigenvalue with its cluster. When the cluster fills the block,
/// the run is repeated with a larger block seeded by the cluster, since a
/// block of size `p` cannot resolve more than `p` copies.
pub(super) fn smallest_with_multiplicity(
    op: &dyn SymmetricOperator,
    block: usize,
    cfg: &EigConfig,
    warm: &[&[f64]],
) -> Result<EigResult> {
    let n = op.dim();
    let mut p = block.max(2).min(n);
    let mut seeds: Vec<Vec<f64>> = warm.iter().map(|w| w.to_vec()).collect();
    let mut spent = 0;
    let mut run_cfg = cfg.clone();
    loop {
        let (mut result, _) = run(op, p, &run_cfg, &seeds)?;
        spent += result.matvecs;
        if result.multiplicity >= p && p < n {
            p = (result.multiplicity + 2).min(n);
            seeds = result.basis;
            // Fresh random directions; the old ones only span what was found.
            run_cfg.seed = run_cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
            continue;
        }
        result.matvecs = spent;
        return Ok(result);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::dense::smallest_dense;
    use crate::eigen::projector_distance;
    use crate::sparse::CsrMatrix;
    use rand::Rng;

    fn random_sparse(n: usize, per_row: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, rng.gen_range(-1.0..1.0)));
            for _ in 0..per_row {
                let j = rng.gen_range(0..n);
                entries.push((i.max(j), i.min(j), rng.gen_range(-1.0..1.0)));
            }
        }
        CsrMatrix::from_triangle(n, &entries).unwrap()
    }

    #[test]
    fn matches_dense_on_random_sparse() {
        let cfg = EigConfig::default();
        for seed in 0..4 {
            let a = random_sparse(150, 3, seed);
            let it = smallest_with_multiplicity(&a, 2, &cfg, &[]).unwrap();
            let de = smallest_dense(&a.to_dense_matrix(), &cfg);
            assert!((it.value - de.value).abs() <= 1e-8 * de.value.abs().max(1.0));
            assert_eq!(it.multiplicity, de.multiplicity);
            assert!(projector_distance(&it.basis, &de.basis) < 1e-6);
        }
    }

    #[test]
    fn resolves_triple_eigenvalue() {
        let mut d: Vec<f64> = (0..120).map(|i| i as f64 * 0.05).collect();
        d[7] = -2.0;
        d[30] = -2.0;
        d[99] = -2.0;
        let a = CsrMatrix::from_diagonal(&d);
        let r = smallest_with_multiplicity(&a, 2, &EigConfig::default(), &[]).unwrap();
        assert!((r.value + 2.0).abs() < 1e-12);
        assert_eq!(r.multiplicity, 3);
        assert_eq!(r.next_value.map(|v| (v * 1e6).round()), Some(0.0));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = random_sparse(200, 2, 9);
        let cfg = EigConfig::default();
        let r1 = smallest_with_multiplicity(&a, 2, &cfg, &[]).unwrap();
        let r2 = smallest_with_multiplicity(&a, 2, &cfg, &[]).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn warm_start_saves_products() {
        let a = random_sparse(500, 3, 4);
        let cfg = EigConfig::default();
        let cold = smallest_with_multiplicity(&a, 2, &cfg, &[]).unwrap();
        let warm = smallest_with_multiplicity(&a, 2, &cfg, &[&cold.basis[0]]).unwrap();
        assert!(warm.matvecs <= cold.matvecs);
        assert!((warm.value - cold.value).abs() < 1e-10);
    }

    #[test]
    fn block_growth_finds_a_third_copy() {
        // Three decoupled diagonal entries share the minimum; a block of two
        // sees only two of them on the first run.
        let d = -4.3726806998877095;
        let a = CsrMatrix::from_triangle(
            11,
            &[
                (1, 1, d),
                (4, 2, -0.8826895512830951),
                (4, 3, -1.617802282868078),
                (5, 5, d),
                (8, 4, 2.22803922895239),
                (8, 6, 1.6385110868929973),
                (9, 8, 1.2699931056901161),
                (10, 10, d),
            ],
        )
        .unwrap();
        let cfg = EigConfig {
            dense_threshold: 0,
            ..EigConfig::default()
        };
        let r = smallest_with_multiplicity(&a, 2, &cfg, &[]).unwrap();
        assert_eq!(r.multiplicity, 3);
        assert!((r.value - d).abs() < 1e-12);
    }
}
