//! Maximization of the concave dual `k(t, l)` over `t` and `l >= 0`.
//!
//! The main loop alternates exact coordinate maximizations: a `l`-step at
//! fixed `t` and a `t`-step at fixed `l`. Coordinate ascent can stall at a
//! kink of a nonsmooth concave function, so the result is checked against
//! the supergradient of `h(l) = max_t k(t, l)`, which is available in closed
//! form from the `t`-step: `b^T x(l) - c` in the easy case and an interval
//! in the hard case. When zero is not in that set, a one-dimensional search
//! on `h` finishes the job.

use serde::{Deserialize, Serialize};

use crate::eigen::{smallest_eig_a, EigConfig, EigResult};
use crate::error::Result;
use crate::problem::ProblemInstance;
use crate::sparse::{dot, norm2};
use crate::trs::{DualEval, Evaluator, TrsSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualConfig {
    pub max_outer: usize,
    /// Relative change in `k` that ends the alternation.
    pub tol_outer: f64,
    /// Relative bracket width that ends a search over `l`.
    pub tol_lambda: f64,
    /// Upper limit for `l`; derived from the data when absent.
    pub lambda_cap: Option<f64>,
    /// Finish with a search on `h(l)` when the alternation stops short of a
    /// stationary point.
    pub polish: bool,
    pub eig: EigConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            max_outer: 30,
            tol_outer: 1e-10,
            tol_lambda: 1e-13,
            lambda_cap: None,
            polish: true,
            eig: EigConfig::default(),
        }
    }
}

impl DualConfig {
    fn cap(&self, inst: &ProblemInstance) -> f64 {
        self.lambda_cap.unwrap_or_else(|| {
            let ratio = norm2(&inst.a) / norm2(&inst.b);
            1e8 * if ratio.is_finite() { ratio.max(1.0) } else { 1.0 }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStatus {
    Running,
    Converged,
    IterationCap,
    Stalled,
}

/// Progress of the alternation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualState {
    pub t: f64,
    pub lambda: f64,
    pub k_value: f64,
    pub last_improvement: f64,
    pub iteration: usize,
    /// `(t, l, k)` after every completed step, nondecreasing in `k`.
    pub history: Vec<(f64, f64, f64)>,
    pub status: DualStatus,
}

impl DualState {
    fn record(&mut self, t: f64, lambda: f64, k: f64) {
        self.last_improvement = k - self.k_value;
        self.t = t;
        self.lambda = lambda;
        self.k_value = k;
        self.history.push((t, lambda, k));
    }
}

#[derive(Debug, Clone)]
pub struct DualResult {
    pub t_star: f64,
    pub lambda_star: f64,
    pub d_star: f64,
    pub eig_at_opt: EigResult,
    /// `lambda_min(D(t*, l*))` coincides with `lambda_min(A)`.
    pub hard_case: bool,
    /// The `t`-subproblem solution at `l*`.
    pub trs: TrsSolution,
    pub state: DualState,
    /// Evaluations of `h` spent after the alternation.
    pub polish_steps: usize,
    pub matvecs: usize,
    pub evals: usize,
}

/// Range of `h'(l)` at the `t`-subproblem solution: a single value in the
/// easy case, an interval over the hard-case solution family otherwise.
pub fn slope_interval(inst: &ProblemInstance, sol: &TrsSolution, cfg: &EigConfig) -> Result<(f64, f64)> {
    let mid = dot(&inst.b, &sol.x) - inst.c;
    if !sol.hard_case {
        return Ok((mid, mid));
    }
    let eig_a = smallest_eig_a(inst, cfg)?;
    let reach = (inst.delta - sol.boundary_norm_sq).max(0.0).sqrt();
    let along = eig_a
        .basis
        .iter()
        .map(|z| dot(z, &inst.b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((mid - along * reach, mid + along * reach))
}

fn slope_scale(inst: &ProblemInstance) -> f64 {
    inst.c
        .abs()
        .max(norm2(&inst.b) * inst.delta.sqrt())
        .max(1.0)
}

/// One point of a concave function of `l`: value and a supergradient
/// element (`slope`), with whatever produced them.
#[derive(Debug, Clone)]
struct Probe<T> {
    l: f64,
    value: f64,
    slope: f64,
    data: T,
}

/// Safeguarded search for the maximizer of a concave function on a bracket
/// with positive slope at the left end and negative slope at the right end.
///
/// Secant steps on the slope handle smooth maxima; when the same end is
/// replaced twice in a row the slopes are inconsistent with a smooth
/// maximum, so the next step intersects the two tangent lines instead, which
/// is exact at a kink. Steps are kept a small margin away from the ends and
/// the search falls back to bisection when it keeps landing on one side.
struct Search<T> {
    lo: Probe<T>,
    hi: Probe<T>,
    f_lo: f64,
    f_hi: f64,
    side: i8,
    repeats: usize,
}

impl<T> Search<T> {
    fn new(lo: Probe<T>, hi: Probe<T>) -> Self {
        Self {
            f_lo: lo.slope,
            f_hi: hi.slope,
            lo,
            hi,
            side: 0,
            repeats: 0,
        }
    }

    fn width(&self) -> f64 {
        self.hi.l - self.lo.l
    }

    /// Intersection of the tangent lines at the two ends and the value there,
    /// an upper bound on the maximum.
    fn tangent_cut(&self) -> (f64, f64) {
        let (lo, hi) = (&self.lo, &self.hi);
        let l = (hi.value - lo.value + lo.slope * lo.l - hi.slope * hi.l) / (lo.slope - hi.slope);
        (l, lo.value + lo.slope * (l - lo.l))
    }

    /// How much the maximum can still exceed the better end.
    fn value_gap(&self) -> f64 {
        let bound = self.tangent_cut().1;
        if bound.is_finite() {
            (bound - self.lo.value.max(self.hi.value)).max(0.0)
        } else {
            f64::INFINITY
        }
    }

    fn propose(&self) -> f64 {
        let (a, b) = (self.lo.l, self.hi.l);
        let mid = 0.5 * (a + b);
        let margin = 1e-3 * (b - a);
        let clamp = |l: f64| if l.is_finite() { l.clamp(a + margin, b - margin) } else { mid };
        match self.repeats {
            0 | 1 => clamp(a + self.f_lo * (b - a) / (self.f_lo - self.f_hi)),
            2 | 3 => clamp(self.tangent_cut().0),
            _ => mid,
        }
    }

    fn update(&mut self, p: Probe<T>) {
        if p.slope > 0.0 {
            self.f_lo = p.slope;
            self.lo = p;
            if self.side == 1 {
                self.repeats += 1;
                self.f_hi *= 0.5;
            } else {
                self.repeats = 0;
            }
            self.side = 1;
        } else {
            self.f_hi = p.slope;
            self.hi = p;
            if self.side == -1 {
                self.repeats += 1;
                self.f_lo *= 0.5;
            } else {
                self.repeats = 0;
            }
            self.side = -1;
        }
    }

    fn better_end(self) -> Probe<T> {
        if self.lo.value >= self.hi.value {
            self.lo
        } else {
            self.hi
        }
    }
}

fn eval_probe(e: DualEval) -> Probe<DualEval> {
    Probe {
        l: e.lambda,
        value: e.k_value,
        slope: e.grad_lambda,
        data: e,
    }
}

/// Maximizes `k(t, .)` over `l >= 0` by bisection and Illinois steps on the
/// sign of the subgradient. Returns `(l, stalled)`, where `stalled` reports
/// that the cap was reached.
pub fn lambda_step(
    ev: &mut Evaluator,
    t: f64,
    lambda_init: f64,
    config: &DualConfig,
) -> Result<(DualEval, bool)> {
    let inst = ev.instance();
    let at_zero = ev.eval(t, 0.0)?;
    if norm2(&inst.b) == 0.0 || at_zero.grad_lambda <= 0.0 {
        return Ok((at_zero, false));
    }
    let cap = config.cap(inst);
    let tiny = 1e-14 * slope_scale(inst);
    let mut lo = at_zero;
    let mut probe = if lambda_init > 0.0 {
        lambda_init
    } else {
        (norm2(&inst.a) / norm2(&inst.b)).clamp(1e-3, 1.0)
    };
    let hi = loop {
        let e = ev.eval(t, probe.min(cap))?;
        if e.grad_lambda.abs() <= tiny {
            return Ok((e, false));
        }
        if e.grad_lambda < 0.0 {
            break e;
        }
        if probe >= cap {
            return Ok((e, true));
        }
        lo = e;
        probe = (2.0 * probe).max(1e-3);
    };
    let mut search = Search::new(eval_probe(lo), eval_probe(hi));
    let value_tol = 1e-15 * search.lo.value.abs().max(1.0);
    for _ in 0..200 {
        if search.width() <= config.tol_lambda * search.hi.l.max(1.0) || search.value_gap() <= value_tol {
            break;
        }
        let e = ev.eval(t, search.propose())?;
        if e.grad_lambda.abs() <= tiny {
            return Ok((e, false));
        }
        search.update(eval_probe(e));
    }
    Ok((search.better_end().data, false))
}

/// Maximizes `k` over `(t, l)`; see the module documentation.
pub fn solve_dual(inst: &ProblemInstance, config: &DualConfig) -> Result<DualResult> {
    let mut ev = Evaluator::new(inst, &config.eig);
    let lmin = smallest_eig_a(inst, &config.eig)?.value;
    let t_init = lmin * (inst.delta + 1.0);
    let scale_k = |k: f64| config.tol_outer * k.abs().max(1.0);

    let first = ev.eval(t_init, 0.0)?;
    let mut state = DualState {
        t: t_init,
        lambda: 0.0,
        k_value: first.k_value,
        last_improvement: 0.0,
        iteration: 0,
        history: vec![(t_init, 0.0, first.k_value)],
        status: DualStatus::Running,
    };
    let mut best: Option<TrsSolution> = None;
    let b_zero = norm2(&inst.b) == 0.0;

    while state.iteration < config.max_outer.max(1) {
        state.iteration += 1;
        let prev_k = state.k_value;
        let prev_lambda = state.lambda;
        let (le, stalled) = lambda_step(&mut ev, state.t, state.lambda, config)?;
        if le.k_value >= state.k_value {
            state.record(state.t, le.lambda, le.k_value);
        }
        let sol = ev.maximize_over_t(state.lambda, Some(state.t))?;
        let k = sol.eval.k_value;
        if k >= state.k_value || best.is_none() {
            state.record(sol.t_star, sol.lambda, k);
            best = Some(sol);
        }
        if stalled {
            state.status = DualStatus::Stalled;
            break;
        }
        let same_lambda = state.lambda == prev_lambda && state.iteration > 1;
        if b_zero || same_lambda || (state.k_value - prev_k).abs() <= scale_k(state.k_value) {
            state.status = DualStatus::Converged;
            break;
        }
    }
    if state.status == DualStatus::Running {
        state.status = DualStatus::IterationCap;
    }
    let mut sol = best.expect("at least one t-step");

    let mut polish_steps = 0;
    if config.polish && !b_zero {
        let (lo, hi) = slope_interval(inst, &sol, &config.eig)?;
        let tol = 1e-10 * slope_scale(inst);
        let stationary = if sol.lambda == 0.0 {
            hi <= tol
        } else {
            lo <= tol && hi >= -tol
        };
        if !stationary {
            let (polished, steps) = polish(&mut ev, sol, config)?;
            polish_steps = steps;
            sol = polished;
            if sol.eval.k_value >= state.k_value {
                state.record(sol.t_star, sol.lambda, sol.eval.k_value);
            }
        }
    }

    let lmin_scale = config.eig.cluster_width(lmin);
    let hard_case = sol.hard_case || sol.eval.eig.value >= lmin - lmin_scale;
    Ok(DualResult {
        t_star: sol.t_star,
        lambda_star: sol.lambda,
        d_star: sol.eval.k_value,
        eig_at_opt: sol.eval.eig.clone(),
        hard_case,
        trs: sol,
        state,
        polish_steps,
        matvecs: ev.matvecs(),
        evals: ev.evals(),
    })
}

/// Maximizes `h(l) = max_t k(t, l)` over `l >= 0`, starting from the
/// alternation's last `t`-step. Returns the best `t`-step found and the number
/// of `h` evaluations.
fn polish(
    ev: &mut Evaluator,
    start: TrsSolution,
    config: &DualConfig,
) -> Result<(TrsSolution, usize)> {
    let inst = ev.instance();
    let cfg = config.eig.clone();
    let tol = 1e-10 * slope_scale(inst);
    let cap = config.cap(inst);
    let mut steps = 0;

    // Signed distance of zero from the supergradient interval: positive means
    // the maximizer lies to the right.
    let direction = |sol: &TrsSolution| -> Result<f64> {
        let (lo, hi) = slope_interval(inst, sol, &cfg)?;
        Ok(if lo > tol {
            lo
        } else if hi < -tol {
            hi
        } else {
            0.0
        })
    };

    let mut hint = Some(start.t_star);
    let eval_h = |ev: &mut Evaluator, l: f64, hint: &mut Option<f64>| -> Result<TrsSolution> {
        let s = ev.maximize_over_t(l, *hint)?;
        *hint = Some(s.t_star);
        Ok(s)
    };

    let d_start = direction(&start)?;
    let mut best = start;
    let (mut lo, hi);
    if d_start > 0.0 {
        lo = best.clone();
        let mut step = best.lambda.max(1e-3);
        loop {
            let l = (lo.lambda + step).min(cap);
            let s = eval_h(ev, l, &mut hint)?;
            steps += 1;
            let d = direction(&s)?;
            if s.eval.k_value > best.eval.k_value {
                best = s.clone();
            }
            if d == 0.0 {
                return Ok((s, steps));
            }
            if d < 0.0 {
                hi = s;
                break;
            }
            if l >= cap {
                return Ok((best, steps));
            }
            lo = s;
            step *= 2.0;
        }
    } else {
        hi = best.clone();
        let s = eval_h(ev, 0.0, &mut hint)?;
        steps += 1;
        let d = direction(&s)?;
        if s.eval.k_value > best.eval.k_value {
            best = s.clone();
        }
        if d <= 0.0 {
            return Ok((s, steps));
        }
        lo = s;
    }

    let probe = |s: TrsSolution| -> Result<Probe<TrsSolution>> {
        Ok(Probe {
            l: s.lambda,
            value: s.eval.k_value,
            slope: direction(&s)?,
            data: s,
        })
    };
    let mut search = Search::new(probe(lo)?, probe(hi)?);
    for _ in 0..200 {
        if search.width() <= config.tol_lambda * search.hi.l.max(1.0) {
            break;
        }
        let s = eval_h(ev, search.propose(), &mut hint)?;
        steps += 1;
        if s.eval.k_value > best.eval.k_value {
            best = s.clone();
        }
        let p = probe(s)?;
        if p.slope == 0.0 {
            return Ok((p.data, steps));
        }
        search.update(p);
    }
    // The bracket is below resolution; prefer the end with the smaller slope.
    let pick = if search.lo.slope.abs() <= search.hi.slope.abs() {
        search.lo.data
    } else {
        search.hi.data
    };
    let slack = 1e-12 * best.eval.k_value.abs().max(1.0);
    Ok((if pick.eval.k_value >= best.eval.k_value - slack { pick } else { best }, steps))
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
    fn lambda_zero_without_linear_constraint() {
        let p = inst(&[-2.0, 1.0], &[1.0, 0.5], &[0.0, 0.0], 1.0);
        let cfg = DualConfig::default();
        let mut ev = Evaluator::new(&p, &cfg.eig);
        for t in [-5.0, 0.0, 3.0] {
            assert_eq!(lambda_step(&mut ev, t, 0.0, &cfg).unwrap().0.lambda, 0.0);
        }
        let r = solve_dual(&p, &cfg).unwrap();
        assert_eq!(r.state.iteration, 1);
        assert_eq!(r.lambda_star, 0.0);
    }

    #[test]
    fn inactive_constraint_keeps_lambda_zero() {
        let p = inst(&[-2.0, 1.0], &[0.0, 0.0], &[1.0, 0.0], 0.0);
        let r = solve_dual(&p, &DualConfig::default()).unwrap();
        assert!((r.d_star + 2.0).abs() < 1e-9);
        assert!(r.lambda_star.abs() < 1e-9);
    }

    #[test]
    fn gap_fixture_dual_value() {
        let p = inst(&[-1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], 0.0);
        let r = solve_dual(&p, &DualConfig::default()).unwrap();
        assert!((r.d_star + 1.0).abs() < 1e-8, "{}", r.d_star);
        assert!((r.lambda_star - 1.0).abs() < 1e-6, "{}", r.lambda_star);
        assert!(r.hard_case);
    }

    #[test]
    fn history_is_monotone() {
        let p = inst(&[-3.0, -1.0, 2.0], &[1.0, 2.0, -1.0], &[1.0, 1.0, 1.0], -0.5);
        let r = solve_dual(&p, &DualConfig::default()).unwrap();
        for w in r.state.history.windows(2) {
            assert!(w[1].2 >= w[0].2 - 1e-12 * w[0].2.abs().max(1.0));
        }
        assert!((r.state.k_value - r.d_star).abs() <= 1e-10 * r.d_star.abs().max(1.0));
    }
}
