//! Exact dense reference solver.
//!
//! Every global minimizer satisfies the KKT conditions, so it is enough to
//! enumerate KKT points and keep the best feasible one. With the linear
//! constraint inactive these are the stationary points of the ball problem
//! with multiplier `l1 >= 0`: secular-equation roots between and beyond the
//! poles, families at poles whose eigenspace does not see the linear term,
//! and the unconstrained stationary point. With the linear constraint active
//! the problem restricted to the hyperplane is again a ball problem, solved
//! by the same enumeration. Local non-global minimizers of the ball problem
//! are included, which matters when the linear constraint cuts off the
//! global one.

use nalgebra::{DMatrix, DVector};

use crate::eigen::dense::sorted_eigen;
use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::sparse::{dot, norm2};

/// Largest `n` the oracle accepts by default.
pub const ORACLE_CAP: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub p_star: f64,
    pub x: Vec<f64>,
}

/// KKT point of `min u^T H u - 2 g^T u` over `||u||^2 <= r2`.
enum Stationary {
    Point(DVector<f64>),
    /// `base + V v` with `||v|| = radius` and `V` orthonormal; the objective is
    /// constant on the family.
    Family {
        base: DVector<f64>,
        dirs: DMatrix<f64>,
        radius: f64,
    },
}

struct Block {
    start: usize,
    len: usize,
    d: f64,
    omega: f64,
}

fn ball_stationary_points(h: &DMatrix<f64>, g: &DVector<f64>, r2: f64) -> Vec<Stationary> {
    let n = h.nrows();
    let mut out = Vec::new();
    if n == 0 {
        out.push(Stationary::Point(DVector::zeros(0)));
        return out;
    }
    let (d, q) = sorted_eigen(h.clone());
    let w: Vec<f64> = (q.transpose() * g).iter().copied().collect();
    let wnorm = norm2(&w);
    let dscale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));

    let mut blocks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && d[end] - d[start] <= 1e-12 * dscale {
            end += 1;
        }
        blocks.push(Block {
            start,
            len: end - start,
            d: d[start..end].iter().sum::<f64>() / (end - start) as f64,
            omega: norm2(&w[start..end]),
        });
        start = end;
    }
    let to_point = |coords: &[f64]| &q * DVector::from_column_slice(coords);
    let coords_at = |l: f64| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for b in &blocks {
            for j in b.start..b.start + b.len {
                if w[j] != 0.0 {
                    y[j] = w[j] / (b.d + l);
                }
            }
        }
        y
    };

    // Secular function on the coupled blocks: ||x(l)||^2 - r2.
    let coupled: Vec<&Block> = blocks.iter().filter(|b| b.omega > 0.0).collect();
    let psi = |l: f64| -> f64 {
        coupled
            .iter()
            .map(|b| (b.omega / (b.d + l)).powi(2))
            .sum::<f64>()
            - r2
    };
    let dpsi = |l: f64| -> f64 {
        -2.0 * coupled
            .iter()
            .map(|b| b.omega * b.omega / (b.d + l).powi(3))
            .sum::<f64>()
    };
    let bisect = |mut lo: f64, mut hi: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let f_lo_sign = f(lo).signum();
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid).signum() == f_lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut roots = Vec::new();
    if r2 > 0.0 && !coupled.is_empty() {
        let total: f64 = coupled.iter().map(|b| b.omega).sum();
        let reach = total / r2.sqrt() + 1.0;
        // Poles at l = -d, in increasing order of l.
        let poles: Vec<f64> = coupled.iter().rev().map(|b| -b.d).collect();
        // Right of the largest pole, psi decreases to -r2.
        let right = *poles.last().unwrap();
        if right + reach >= 0.0 {
            let lo = right.max(0.0);
            let lo = if lo == right { next_up(right) } else { lo };
            if psi(lo) >= 0.0 {
                roots.push(bisect(lo, right.max(0.0) + reach, &psi));
            }
        }
        // Left of the smallest pole, psi increases from -r2.
        let left = poles[0];
        if left > 0.0 {
            let hi = next_down(left);
            let lo = (left - reach).max(0.0);
            if psi(lo) <= 0.0 && psi(hi) >= 0.0 {
                roots.push(bisect(lo, hi, &psi));
            }
        }
        // Between poles psi is convex: zero, one or two roots around its
        // minimum.
        for pair in poles.windows(2) {
            let (a, b) = (next_up(pair[0]), next_down(pair[1]));
            if b <= 0.0 || a >= b {
                continue;
            }
            let m = bisect(a, b, &dpsi);
            let lo = a.max(0.0);
            if m >= lo && psi(m) <= 0.0 {
                if psi(lo) >= 0.0 {
                    roots.push(bisect(lo, m, &psi));
                }
                roots.push(bisect(m, b, &psi));
            } else if m < lo && psi(lo) <= 0.0 {
                roots.push(bisect(lo, b, &psi));
            }
        }
    }
    for l in roots {
        out.push(Stationary::Point(to_point(&coords_at(l))));
    }

    // Families at poles the linear term does not see.
    let weak = 1e-9 * wnorm.max(1.0);
    for b in &blocks {
        if b.omega > weak || b.d > 1e-12 * dscale {
            continue;
        }
        let l = (-b.d).max(0.0);
        let mut y = vec![0.0; n];
        for other in &blocks {
            if std::ptr::eq(other, b) {
                continue;
            }
            for j in other.start..other.start + other.len {
                y[j] = w[j] / (other.d + l);
            }
        }
        let rest = r2 - dot(&y, &y);
        if rest < -1e-12 * r2.max(1.0) {
            continue;
        }
        out.push(Stationary::Family {
            base: to_point(&y),
            dirs: q.columns(b.start, b.len).into_owned(),
            radius: rest.max(0.0).sqrt(),
        });
    }

    // Unconstrained stationary point.
    if blocks.iter().all(|b| b.d.abs() > 1e-12 * dscale) {
        let y: Vec<f64> = (0..n)
            .map(|j| {
                let b = blocks.iter().find(|b| j < b.start + b.len).unwrap();
                w[j] / b.d
            })
            .collect();
        if dot(&y, &y) <= r2 {
            out.push(Stationary::Point(to_point(&y)));
        }
    }
    out
}

fn next_up(x: f64) -> f64 {
    x + x.abs().max(1.0) * 4.0 * f64::EPSILON
}

fn next_down(x: f64) -> f64 {
    x - x.abs().max(1.0) * 4.0 * f64::EPSILON
}

/// Global minimizer by KKT enumeration, for `n <= cap`.
pub fn oracle_solve_with_cap(inst: &ProblemInstance, cap: usize) -> Result<OracleSolution> {
    let n = inst.n();
    if n > cap {
        return Err(Error::OracleCap { n, cap });
    }
    let a_dense = inst.matrix.to_dense_matrix();
    let a = DVector::from_column_slice(&inst.a);
    let b = DVector::from_column_slice(&inst.b);
    let ball_tol = 1e-9 * inst.delta.max(1.0);
    let lin_tol = 1e-9 * inst.c.abs().max(1.0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut offer = |x: DVector<f64>| {
        let xs: Vec<f64> = x.iter().copied().collect();
        if dot(&xs, &xs) - inst.delta > ball_tol || dot(&inst.b, &xs) - inst.c > lin_tol {
            return;
        }
        let f = inst.objective(&xs);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, xs));
        }
    };

    // Linear constraint inactive.
    for s in ball_stationary_points(&a_dense, &a, inst.delta) {
        match s {
            Stationary::Point(x) => offer(x),
            Stationary::Family { base, dirs, radius } => {
                // Objective is constant on the family; take the member with the
                // smallest b^T x.
                let proj = dirs.transpose() * &b;
                let pn = proj.norm();
                let v = if pn > 0.0 {
                    -proj * (radius / pn)
                } else {
                    let mut e = DVector::zeros(dirs.ncols());
                    e[0] = radius;
                    e
                };
                offer(base + dirs * v);
            }
        }
    }

    // Linear constraint active: x = x0 + W u with W spanning b-perp.
    let bn = b.norm();
    if bn > 0.0 {
        let x0 = &b * (inst.c / (bn * bn));
        let r2 = inst.delta - x0.norm_squared();
        if r2 >= -ball_tol {
            let w = orthonormal_complement(&b);
            let h = w.transpose() * &a_dense * &w;
            let h = (&h + h.transpose()) * 0.5;
            let g = w.transpose() * (&a - &a_dense * &x0);
            for s in ball_stationary_points(&h, &g, r2.max(0.0)) {
                let u = match s {
                    Stationary::Point(u) => u,
                    Stationary::Family { base, dirs, radius } => {
                        let mut e = DVector::zeros(dirs.ncols());
                        e[0] = radius;
                        base + dirs * e
                    }
                };
                offer(&x0 + &w * u);
            }
        }
    }

    best.map(|(p_star, x)| OracleSolution { p_star, x })
        .ok_or_else(|| Error::Inconsistent("oracle found no feasible KKT point".into()))
}

/// [`oracle_solve_with_cap`] with the default cap.
pub fn oracle_solve(inst: &ProblemInstance) -> Result<OracleSolution> {
    oracle_solve_with_cap(inst, ORACLE_CAP)
}

/// Columns `2..n` of the Householder reflector that maps `b` onto a multiple
/// of `e1`.
fn orthonormal_complement(b: &DVector<f64>) -> DMatrix<f64> {
    let n = b.len();
    let mut u = b.clone();
    let bn = b.norm();
    u[0] += if u[0] >= 0.0 { bn } else { -bn };
    let uu = u.norm_squared();
    DMatrix::from_fn(n, n - 1, |i, j| {
        let col = j + 1;
        (if i == col { 1.0 } else { 0.0 }) - 2.0 * u[i] * u[col] / uu
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    fn inst(diag: &[f64], a: &[f64], b: &[f64], c: f64) -> ProblemInstance {
        ProblemInstance::new(CsrMatrix::from_diagonal(diag), a.to_vec(), b.to_vec(), c, 1.0)
            .unwrap()
    }

    #[test]
    fn linear_constraint_selects_branch() {
        let s = oracle_solve(&inst(&[-2.0, 1.0], &[0.0, 0.0], &[1.0, 0.0], 0.0)).unwrap();
        assert!((s.p_star + 2.0).abs() < 1e-12);
        assert!((s.x[0] + 1.0).abs() < 1e-9 && s.x[1].abs() < 1e-9);
    }

    #[test]
    fn gap_fixture_primal_value() {
        let s = oracle_solve(&inst(&[-1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], 0.0)).unwrap();
        assert!(s.p_star.abs() < 1e-12);
        assert!(s.x[0].abs() < 1e-12);
    }

    #[test]
    fn rayleigh_quotient_without_linear_term() {
        let s = oracle_solve(&inst(&[-3.0, 1.0, 2.0], &[0.0; 3], &[0.0; 3], 1.0)).unwrap();
        assert!((s.p_star + 3.0).abs() < 1e-12);
    }

    #[test]
    fn hard_case_fixture() {
        let s = oracle_solve(&inst(&[-1.0, -1.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], 10.0))
            .unwrap();
        assert!((s.p_star + 1.5).abs() < 1e-12);
    }

    #[test]
    fn local_nonglobal_minimizer_counts() {
        // The global ball minimizer x = (1, 0) is cut off; the best point
        // left is the local non-global one near (-1, 0) on the ball.
        let p = inst(&[-2.0, 1.0], &[0.1, 0.0], &[1.0, 0.0], 0.5);
        let s = oracle_solve(&p).unwrap();
        let brute = (0..200_000)
            .map(|k| {
                let th = k as f64 * std::f64::consts::TAU / 200_000.0;
                let x = [th.cos(), th.sin()];
                if x[0] <= 0.5 {
                    p.objective(&x)
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min);
        assert!(s.p_star <= brute + 1e-9);
        assert!(s.p_star >= brute - 1e-6);
    }

    #[test]
    fn refuses_large_instances() {
        let p = inst(&[-1.0; 5], &[0.0; 5], &[0.0; 5], 1.0);
        assert!(matches!(oracle_solve_with_cap(&p, 4), Err(Error::OracleCap { n: 5, cap: 4 })));
    }
}
