//! Smallest eigenpairs of the bordered matrix through the eigenbasis of `A`.
//!
//! With `A = Q diag(d) Q^T` and `w = Q^T g`, the bordered matrix is
//! orthogonally similar to the arrowhead `[[t, -w^T], [-w, diag(d)]]`.
//! Equal eigenvalues of `A` are grouped into blocks; inside a block only the
//! direction of `w_B` couples to the border, the remaining directions are
//! eigenvectors with eigenvalue `d_B` and zero first component. Coupled
//! eigenvalues are the roots of
//!
//! ```text
//! f(mu) = t - mu - sum_B |w_B|^2 / (d_B - mu)
//! ```
//!
//! one below the smallest coupled pole and one between each pair of
//! consecutive coupled poles. Roots are located as offsets from the nearest
//! pole so that `d_B - mu` keeps full relative accuracy.

use super::{DenseSpectrum, EigConfig, EigResult};
use crate::sparse::{dot, norm2};

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    len: usize,
    d: f64,
    omega: f64,
}

/// Secular root written as `mu = pole + sign * offset`.
#[derive(Debug, Clone, Copy)]
struct Root {
    pole: f64,
    sign: f64,
    offset: f64,
}

impl Root {
    fn value(&self) -> f64 {
        self.pole + self.sign * self.offset
    }

    /// `d - mu`, accurate when `d` is near the pole.
    fn diff(&self, d: f64) -> f64 {
        (d - self.pole) - self.sign * self.offset
    }
}

fn blocks(values: &[f64], w: &[f64]) -> Vec<Block> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut out = Vec::new();
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && values[end] - values[start] <= tol {
            end += 1;
        }
        let d = values[start..end].iter().sum::<f64>() / (end - start) as f64;
        let omega = norm2(&w[start..end]);
        out.push(Block {
            start,
            len: end - start,
            d,
            omega,
        });
        start = end;
    }
    out
}

/// `f` evaluated at a root candidate.
fn secular(t: f64, coupled: &[Block], r: &Root) -> f64 {
    let mut f = (t - r.pole) - r.sign * r.offset;
    for b in coupled {
        f -= b.omega * b.omega / r.diff(b.d);
    }
    f
}

/// Root of the decreasing `f` at an offset in `(0, hi]` from `pole` along
/// `sign`. With `sign = -1`, `g(offset) = f(pole - offset)` increases; with
/// `sign = +1` it decreases. Bisects geometrically while the bracket spans
/// many decades, then arithmetically.
fn solve_offset(t: f64, coupled: &[Block], pole: f64, sign: f64, mut hi: f64) -> Root {
    let mut lo = hi * 1e-300;
    // Sign of g next to the pole.
    let lo_sign = sign;
    for _ in 0..400 {
        let mid = if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let g = secular(
            t,
            coupled,
            &Root {
                pole,
                sign,
                offset: mid,
            },
        );
        if g == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if g.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Root {
        pole,
        sign,
        offset: 0.5 * (lo + hi),
    }
}

/// Positive root of `x^2 + beta x - gamma`, `gamma > 0`.
fn positive_quadratic_root(beta: f64, gamma: f64) -> f64 {
    let disc = (beta * beta + 4.0 * gamma).sqrt();
    if beta >= 0.0 {
        2.0 * gamma / (beta + disc)
    } else {
        0.5 * (disc - beta)
    }
}

fn root_below(t: f64, coupled: &[Block]) -> Root {
    let first = coupled[0];
    let total: f64 = coupled.iter().map(|b| b.omega * b.omega).sum();
    // g(x) >= (t - p) + x - total / x, so this offset makes g non-negative.
    let hi = positive_quadratic_root(t - first.d, total);
    // Widen slightly against rounding in the bound.
    solve_offset(t, coupled, first.d, -1.0, hi * (1.0 + 1e-12) + f64::MIN_POSITIVE)
}

/// Root strictly between coupled poles `k` and `k + 1`.
fn root_between(t: f64, coupled: &[Block], k: usize) -> Root {
    let (lo, hi) = (coupled[k].d, coupled[k + 1].d);
    let half = 0.5 * (hi - lo);
    let mid = Root {
        pole: lo,
        sign: 1.0,
        offset: half,
    };
    if secular(t, coupled, &mid) > 0.0 {
        solve_offset(t, coupled, hi, -1.0, half)
    } else {
        solve_offset(t, coupled, lo, 1.0, half)
    }
}

/// Eigenvector `(1, (d - mu)^{-1} w)`, normalized, in original coordinates.
fn root_vector(spec: &DenseSpectrum, blocks: &[Block], w: &[f64], r: &Root) -> Vec<f64> {
    let mut coords = vec![0.0; w.len()];
    for b in blocks {
        if b.omega == 0.0 {
            continue;
        }
        let e = r.diff(b.d);
        for j in b.start..b.start + b.len {
            coords[j] = w[j] / e;
        }
    }
    // Scale before squaring so huge components near a pole do not overflow.
    let big = coords.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let y0 = 1.0 / big;
    for c in coords.iter_mut() {
        *c /= big;
    }
    let norm = (y0 * y0 + dot(&coords, &coords)).sqrt();
    let z = spec.to_original(&coords);
    let mut v = Vec::with_capacity(z.len() + 1);
    v.push(y0 / norm);
    v.extend(z.into_iter().map(|x| x / norm));
    v
}

/// Orthonormal directions inside a block. For a coupled block these span the
/// complement of `w_B`.
fn block_vectors(spec: &DenseSpectrum, b: &Block, w: &[f64]) -> Vec<Vec<f64>> {
    let n = spec.n();
    let lift = |coords: &[f64]| {
        let mut full = vec![0.0; n];
        full[b.start..b.start + b.len].copy_from_slice(coords);
        let z = spec.to_original(&full);
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v.extend(z);
        v
    };
    if b.omega == 0.0 {
        return (0..b.len)
            .map(|k| {
                let mut e = vec![0.0; b.len];
                e[k] = 1.0;
                lift(&e)
            })
            .collect();
    }
    // Householder reflector sending w_B to a multiple of e1; its remaining
    // columns are orthogonal to w_B.
    let wb = &w[b.start..b.start + b.len];
    let mut u = wb.to_vec();
    u[0] += if u[0] >= 0.0 { b.omega } else { -b.omega };
    let uu = dot(&u, &u);
    (1..b.len)
        .map(|k| {
            let col: Vec<f64> = (0..b.len)
                .map(|i| if i == k { 1.0 } else { 0.0 } - 2.0 * u[i] * u[k] / uu)
                .collect();
            lift(&col)
        })
        .collect()
}

fn orthonormalize(vectors: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors.drain(..) {
        for _ in 0..2 {
            for q in &out {
                let h = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= h * qi;
                }
            }
        }
        let nv = norm2(&v);
        if nv > 1e-8 {
            for x in v.iter_mut() {
                *x /= nv;
            }
            out.push(v);
        }
    }
    *vectors = out;
}

enum Candidate {
    Root(Root),
    Block(usize),
}

pub(super) fn bordered_smallest(
    spec: &DenseSpectrum,
    t: f64,
    lambda: f64,
    cfg: &EigConfig,
) -> EigResult {
    let n = spec.n();
    let w = spec.g_coords(lambda);
    let blocks = blocks(&spec.values, &w);
    let coupled: Vec<Block> = blocks.iter().copied().filter(|b| b.omega > 0.0).collect();

    // Eigenvalue groups: (value, multiplicity, how to build vectors).
    let mut groups: Vec<(f64, usize, Candidate)> = Vec::new();
    for (k, b) in blocks.iter().enumerate() {
        let copies = if b.omega > 0.0 { b.len - 1 } else { b.len };
        if copies > 0 {
            groups.push((b.d, copies, Candidate::Block(k)));
        }
    }
    let first_root = if coupled.is_empty() {
        Root {
            pole: t,
            sign: 1.0,
            offset: 0.0,
        }
    } else {
        root_below(t, &coupled)
    };
    groups.push((first_root.value(), 1, Candidate::Root(first_root)));

    let lowest = groups.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
    let threshold = lowest + cfg.cluster_width(lowest);
    // Interior roots only matter up to the first one above the threshold.
    for k in 0..coupled.len().saturating_sub(1) {
        let r = root_between(t, &coupled, k);
        let v = r.value();
        groups.push((v, 1, Candidate::Root(r)));
        if coupled[k].d > threshold {
            break;
        }
    }
    groups.sort_by(|x, y| x.0.total_cmp(&y.0));

    let value = groups[0].0;
    let mut basis = Vec::new();
    let mut next_value = None;
    for (v, _, cand) in &groups {
        if *v > threshold {
            next_value = Some(*v);
            break;
        }
        match cand {
            Candidate::Root(r) => basis.push(root_vector(spec, &blocks, &w, r)),
            Candidate::Block(k) => basis.extend(block_vectors(spec, &blocks[*k], &w)),
        }
    }
    orthonormalize(&mut basis);
    debug_assert!(basis.iter().all(|v| v.len() == n + 1));
    EigResult {
        value,
        multiplicity: basis.len(),
        basis,
        anchored: None,
        next_value,
        matvecs: 0,
    }
}
