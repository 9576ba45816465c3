//! The dual function `k(t, l)`, its subgradient, the hard-case threshold `t0`
//! and the maximization over `t` for fixed `l`.
//!
//! For fixed `l` the maximization over `t` is a trust-region subproblem with
//! linear term `g = a - (l/2) b`. Its derivative in `t` is
//! `(delta + 1) y0(t)^2 - 1` where `y0` is the first component of the
//! normalized anchored eigenvector of `D(t, l)`. Writing the eigenvector as
//! `y0 (1, x)` gives `||x||^2 = (1 - y0^2) / y0^2`, so the root is where `x`
//! reaches the boundary of the ball.

use serde::{Deserialize, Serialize};

use crate::eigen::{anchor_basis, bordered_smallest, smallest_eig_a, EigConfig, EigResult};
use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::sparse::{axpy, dot, norm2};

/// `k(t, l)` together with the eigenpair it came from and one subgradient.
#[derive(Debug, Clone)]
pub struct DualEval {
    pub t: f64,
    pub lambda: f64,
    pub k_value: f64,
    /// Cluster of `lambda_min(D(t, l))` after anchoring.
    pub eig: EigResult,
    pub grad_t: f64,
    pub grad_lambda: f64,
    /// The smallest eigenvalue of `D` is simple.
    pub differentiable: bool,
}

impl DualEval {
    /// First component of the anchored eigenvector, zero when none exists.
    pub fn y0(&self) -> f64 {
        self.eig.anchored_vector().map_or(0.0, |v| v[0])
    }

    /// `z / y0` from the anchored eigenvector.
    pub fn primal_candidate(&self) -> Option<Vec<f64>> {
        let v = self.eig.anchored_vector()?;
        let y0 = v[0];
        if y0 <= 0.0 {
            return None;
        }
        Some(v[1..].iter().map(|z| z / y0).collect())
    }
}

/// Output of the maximization over `t` for fixed `l`.
#[derive(Debug, Clone)]
pub struct TrsSolution {
    pub t_star: f64,
    pub lambda: f64,
    /// Primal candidate. On the boundary in the easy case, inside the ball in
    /// the hard case.
    pub x: Vec<f64>,
    pub hard_case: bool,
    pub t0: Option<f64>,
    /// `-lambda_min(D(t*, l))`, the ball multiplier.
    pub lambda1: f64,
    pub boundary_norm_sq: f64,
    pub eval: DualEval,
}

/// `t0` and the minimum-norm solution `x0` of `(A - lambda_min I) x = g`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardCaseData {
    pub t0: f64,
    pub x0: Vec<f64>,
    /// Relative residual of the pseudo-inverse solve.
    pub residual: f64,
}

/// `a - (l/2) b`
pub fn shifted_linear_term(inst: &ProblemInstance, lambda: f64) -> Vec<f64> {
    inst.a
        .iter()
        .zip(&inst.b)
        .map(|(a, b)| a - 0.5 * lambda * b)
        .collect()
}

/// Evaluates `k` and solves the `t`-subproblem, reusing eigenvectors between
/// calls as starting vectors. Not meant to be shared between threads.
pub struct Evaluator<'a> {
    inst: &'a ProblemInstance,
    cfg: EigConfig,
    warm: Option<Vec<f64>>,
    matvecs: usize,
    evals: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a ProblemInstance, cfg: &EigConfig) -> Self {
        Self {
            inst,
            cfg: cfg.clone(),
            warm: None,
            matvecs: 0,
            evals: 0,
        }
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn config(&self) -> &EigConfig {
        &self.cfg
    }

    /// Operator products spent so far.
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    /// Dual evaluations so far.
    pub fn evals(&self) -> usize {
        self.evals
    }

    pub fn eval(&mut self, t: f64, lambda: f64) -> Result<DualEval> {
        let inst = self.inst;
        let warm: Vec<&[f64]> = self.warm.iter().map(|v| v.as_slice()).collect();
        let eig = bordered_smallest(inst, t, lambda, &self.cfg, &warm)?;
        self.matvecs += eig.matvecs;
        self.evals += 1;
        let eig = anchor_basis(eig, self.cfg.tol_anchor);
        self.warm = Some(eig.basis[0].clone());
        let scale = inst.delta + 1.0;
        let k_value = scale * eig.value - t - lambda * inst.c;
        let (grad_t, grad_lambda) = match eig.anchored_vector() {
            Some(v) => {
                let y0 = v[0];
                (
                    scale * y0 * y0 - 1.0,
                    scale * y0 * dot(&inst.b, &v[1..]) - inst.c,
                )
            }
            None => (-1.0, -inst.c),
        };
        Ok(DualEval {
            t,
            lambda,
            k_value,
            differentiable: eig.multiplicity == 1,
            eig,
            grad_t,
            grad_lambda,
        })
    }

    /// `t0 = lambda_min(A) + g^T (A - lambda_min(A) I)^+ g` with
    /// `g = a - (l/2) b`.
    pub fn hard_case_data(&mut self, lambda: f64) -> Result<HardCaseData> {
        let inst = self.inst;
        let g = shifted_linear_term(inst, lambda);
        let eig_a = smallest_eig_a(inst, &self.cfg)?;
        let lmin = eig_a.value;
        if inst.n() <= self.cfg.dense_threshold {
            let spec = inst.dense_spectrum()?;
            let w = spec.g_coords(lambda);
            let mut coords = vec![0.0; w.len()];
            for j in eig_a.multiplicity..w.len() {
                coords[j] = w[j] / (spec.values[j] - lmin);
            }
            let t0 = lmin + dot(&w, &coords);
            return Ok(HardCaseData {
                t0,
                x0: spec.to_original(&coords),
                residual: 0.0,
            });
        }
        let (x0, residual, iters) = deflated_cg(inst, lmin, &eig_a.basis, &g)?;
        self.matvecs += iters;
        Ok(HardCaseData {
            t0: lmin + dot(&g, &x0),
            x0,
            residual,
        })
    }

    /// Maximizes `k(., l)`. `hint` is a previous maximizer used to place the
    /// initial bracket.
    pub fn maximize_over_t(&mut self, lambda: f64, hint: Option<f64>) -> Result<TrsSolution> {
        let inst = self.inst;
        let eig_a = smallest_eig_a(inst, &self.cfg)?;
        let lmin = eig_a.value;
        let g = shifted_linear_term(inst, lambda);
        let gnorm = norm2(&g);
        let along: f64 = eig_a
            .basis
            .iter()
            .map(|z| dot(z, &g).powi(2))
            .sum::<f64>()
            .sqrt();

        if along <= self.cfg.tol_anchor * gnorm {
            let hc = self.hard_case_data(lambda)?;
            let norm_sq = dot(&hc.x0, &hc.x0);
            if norm_sq <= inst.delta * (1.0 + 1e-10) {
                let eval = self.eval(hc.t0, lambda)?;
                return Ok(TrsSolution {
                    t_star: hc.t0,
                    lambda,
                    x: hc.x0,
                    hard_case: true,
                    t0: Some(hc.t0),
                    lambda1: -lmin,
                    boundary_norm_sq: norm_sq,
                    eval,
                });
            }
        }

        let eval = self.root_in_t(lambda, lmin, gnorm, hint)?;
        let x = eval.primal_candidate().ok_or_else(|| {
            Error::Inconsistent(format!(
                "no eigenvector with nonzero first component at t = {:e}, lambda = {:e}",
                eval.t, lambda
            ))
        })?;
        Ok(TrsSolution {
            t_star: eval.t,
            lambda,
            boundary_norm_sq: dot(&x, &x),
            x,
            hard_case: false,
            t0: None,
            lambda1: -eval.eig.value,
            eval,
        })
    }

    /// Root of the decreasing function `t -> (delta + 1) y0(t)^2 - 1`.
    ///
    /// Steps come from a model that keeps only the pole at `lambda_min(A)`:
    /// with `d = lambda_min(A) - mu` and `r = ||x||`, the weight
    /// `omega = r d` is held fixed and the model root solved exactly. The
    /// model is exact when `g` only couples to that eigenspace and otherwise
    /// behaves like a Newton step. A bracket, once found, safeguards the
    /// steps with secant and bisection fallbacks.
    fn root_in_t(
        &mut self,
        lambda: f64,
        lmin: f64,
        gnorm: f64,
        hint: Option<f64>,
    ) -> Result<DualEval> {
        const MAX_EXPANSIONS: usize = 60;
        let delta = self.inst.delta;
        let sd = delta.sqrt();
        // 1/||x|| - 1/sqrt(delta), positive left of the root.
        let psi = |e: &DualEval| {
            let y0 = e.y0();
            let rest = 1.0 - y0 * y0;
            if rest <= 0.0 {
                f64::MAX
            } else {
                y0 / rest.sqrt() - 1.0 / sd
            }
        };
        let model = |e: &DualEval| -> Option<f64> {
            let y0 = e.y0();
            let d = lmin - e.eig.value;
            if !(y0 > 0.0 && d > 0.0) {
                return None;
            }
            let r = (1.0 - y0 * y0).max(0.0).sqrt() / y0;
            let step = d * (1.0 - r * sd) + r * d / sd - r * r * d;
            step.is_finite().then_some(e.t + step)
        };
        let done = |e: &DualEval| e.grad_t.abs() <= 1e-10 && e.eig.anchored.is_some();

        let start = match hint {
            Some(h) if h.is_finite() => h,
            _ => lmin - gnorm * ((delta + 1.0) / delta).sqrt() - 1.0,
        };
        let first = self.eval(start, lambda)?;
        if done(&first) {
            return Ok(first);
        }
        let mut step = (1e-3 * start.abs()).max(1e-3).max((gnorm * sd).min(1.0));
        let mut lo: Option<(DualEval, f64)> = None;
        let mut hi: Option<(DualEval, f64)> = None;
        let mut last = first;
        let mut best_abs = f64::INFINITY;
        let mut stalls = 0;
        let mut expansions = 0;
        let mut side = 0i8;
        for _ in 0..(200 + MAX_EXPANSIONS) {
            let f = psi(&last);
            if f.abs() < 0.5 * best_abs {
                stalls = 0;
            } else {
                stalls += 1;
            }
            best_abs = best_abs.min(f.abs());
            let proposal = model(&last);
            if f > 0.0 {
                if let Some((_, f_hi)) = hi.as_mut() {
                    if side == 1 {
                        *f_hi *= 0.5;
                    }
                }
                side = 1;
                lo = Some((last, f));
            } else {
                if let Some((_, f_lo)) = lo.as_mut() {
                    if side == -1 {
                        *f_lo *= 0.5;
                    }
                }
                side = -1;
                hi = Some((last, f));
            }
            let t = match (&lo, &hi) {
                (Some((l, f_lo)), Some((h, f_hi))) => {
                    let width = h.t - l.t;
                    if width <= 1e-12 * l.t.abs().max(1.0) {
                        break;
                    }
                    let margin = 1e-3 * width;
                    let inside = |t: f64| t > l.t + margin && t < h.t - margin;
                    let secant = if *f_lo < f64::MAX && f_hi.is_finite() {
                        l.t + f_lo * width / (f_lo - f_hi)
                    } else {
                        f64::NAN
                    };
                    match proposal {
                        Some(t) if stalls < 2 && inside(t) => t,
                        _ if stalls < 3 && inside(secant) => secant,
                        _ => 0.5 * (l.t + h.t),
                    }
                }
                (Some((l, _)), None) => {
                    expansions += 1;
                    let t = match proposal {
                        Some(t) if t > l.t && stalls < 2 => t,
                        _ => l.t + step,
                    };
                    step = (2.0 * step).max(2.0 * (t - l.t));
                    t
                }
                (None, Some((h, _))) => {
                    expansions += 1;
                    let t = match proposal {
                        Some(t) if t < h.t && stalls < 2 => t,
                        _ => h.t - step,
                    };
                    step = (2.0 * step).max(2.0 * (h.t - t));
                    t
                }
                (None, None) => unreachable!(),
            };
            if expansions > MAX_EXPANSIONS {
                return Err(Error::Bracket {
                    expansions: MAX_EXPANSIONS,
                });
            }
            last = self.eval(t, lambda)?;
            if done(&last) {
                return Ok(last);
            }
        }
        // The bracket collapsed; keep whichever end is closer to the root.
        let candidates = [lo.map(|p| p.0), hi.map(|p| p.0)];
        candidates
            .into_iter()
            .flatten()
            .filter(|e| e.eig.anchored.is_some())
            .min_by(|x, y| x.grad_t.abs().total_cmp(&y.grad_t.abs()))
            .ok_or(Error::Bracket {
                expansions: MAX_EXPANSIONS,
            })
    }
}

/// Conjugate gradients for `(A - lmin I) x = P g` on the orthogonal
/// complement of `basis`, where `P` projects onto that complement.
fn deflated_cg(
    inst: &ProblemInstance,
    lmin: f64,
    basis: &[Vec<f64>],
    g: &[f64],
) -> Result<(Vec<f64>, f64, usize)> {
    let n = inst.n();
    let project = |v: &mut [f64]| {
        for _ in 0..2 {
            for z in basis {
                let h = dot(z, v);
                axpy(-h, z, v);
            }
        }
    };
    let apply = |v: &[f64], out: &mut [f64]| {
        inst.matrix.matvec(v, out);
        axpy(-lmin, v, out);
    };
    let mut r = g.to_vec();
    project(&mut r);
    let rhs_norm = norm2(&r);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let mut p = r.clone();
    let mut q = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let max_iter = (10 * n).max(1000);
    let mut iters = 0;
    let target = 1e-12 * rhs_norm;
    while iters < max_iter {
        apply(&p, &mut q);
        project(&mut q);
        iters += 1;
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            break;
        }
        let alpha = rr / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    // True residual of the projected system.
    let mut res = g.to_vec();
    project(&mut res);
    apply(&x, &mut q);
    project(&mut q);
    axpy(-1.0, &q, &mut res);
    let rel = norm2(&res) / rhs_norm;
    if rel > 1e-8 {
        return Err(Error::PseudoInverse { residual: rel });
    }
    Ok((x, rel, iters))
}

/// One-shot evaluation of `k(t, l)`.
pub fn eval_k(inst: &ProblemInstance, t: f64, lambda: f64, cfg: &EigConfig) -> Result<DualEval> {
    Evaluator::new(inst, cfg).eval(t, lambda)
}

/// One-shot `t0` for the linear term `a - (l/2) b`.
pub fn compute_t0(inst: &ProblemInstance, lambda: f64, cfg: &EigConfig) -> Result<f64> {
    Ok(Evaluator::new(inst, cfg).hard_case_data(lambda)?.t0)
}

/// One-shot maximization of `k(., l)`.
pub fn maximize_over_t(inst: &ProblemInstance, lambda: f64, cfg: &EigConfig) -> Result<TrsSolution> {
    Evaluator::new(inst, cfg).maximize_over_t(lambda, None)
}
