//! From a dual optimum to a primal solution or a duality-gap certificate.
//!
//! In the easy case the anchored eigenvector of `D(t*, l*)` gives the global
//! solution directly. In the hard case the candidate `x` lies inside the ball
//! and has to be moved to the boundary along the eigenspace of
//! `lambda_min(A)`, which leaves stationarity untouched. When that eigenspace
//! is one-dimensional, `l* > 0` and the two boundary points lie strictly on
//! opposite sides of the hyperplane, no primal point attains the dual value
//! and a certificate is returned instead.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dual::{solve_dual, DualConfig, DualResult};
use crate::eigen::{smallest_eig_a, EigResult};
use crate::error::{Error, Result};
use crate::problem::{kkt_residuals, pd_threshold, validate, KktResiduals, ProblemInstance};
use crate::sparse::{axpy, dot, norm2, CsrMatrix, SymmetricOperator};
use crate::trs::shifted_linear_term;

pub type SolveConfig = DualConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Zero duality gap; `x_star` is a global minimizer.
    #[serde(rename = "strong_duality_solved")]
    Solved,
    /// Positive duality gap; `objective` is the dual lower bound.
    #[serde(rename = "duality_gap_lower_bound")]
    DualityGap,
}

/// Witness of a positive duality gap: the two boundary solutions of the
/// Lagrangian stationarity system at multiplier `mu`, one on each side of the
/// hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub mu: f64,
    /// `(b^T x1 - c, b^T x2 - c)`
    pub signs: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Easy,
    HardInterior,
    HardMult1,
    HardMult2,
    Deflated,
    Gap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub eigen_a_ms: f64,
    pub dual_ms: f64,
    pub recovery_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub outer_iterations: usize,
    pub polish_steps: usize,
    pub dual_evaluations: usize,
    pub matvecs: usize,
    pub branch: Branch,
    pub lambda_min_a: f64,
    pub multiplicity_a: usize,
    pub deflations: usize,
    /// The eigenvalue clusters sit close to the next eigenvalue, so the
    /// easy/hard classification may be unreliable.
    pub near_degenerate: bool,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    pub x_star: Option<Vec<f64>>,
    /// Primal value when solved, the dual lower bound otherwise.
    pub objective: f64,
    pub dual_value: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub kkt: Option<KktResiduals>,
    pub gap_certificate: Option<GapCertificate>,
    pub diagnostics: Diagnostics,
}

/// Validates, maximizes the dual and recovers a primal solution.
pub fn solve(inst: &ProblemInstance, config: &SolveConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let report = validate(inst, &config.eig)?;
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    let eigen_a_ms = ms(start);
    let dual_start = Instant::now();
    let dual = solve_dual(inst, config)?;
    let dual_ms = ms(dual_start);
    let mut out = recover(inst, &dual, config)?;
    out.diagnostics.timings.eigen_a_ms = eigen_a_ms;
    out.diagnostics.timings.dual_ms = dual_ms;
    out.diagnostics.timings.total_ms = ms(start);
    Ok(out)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Tolerance below which `l*` counts as zero.
fn lambda_tolerance(inst: &ProblemInstance) -> f64 {
    let ratio = norm2(&inst.a) / norm2(&inst.b);
    1e-8 * if ratio.is_finite() { ratio.max(1.0) } else { 1.0 }
}

/// Margin on `b^T x_i - c` below which a side of the hyperplane is not
/// trusted.
fn side_margin(inst: &ProblemInstance) -> f64 {
    let scale = inst
        .c
        .abs()
        .max(norm2(&inst.b) * inst.delta.sqrt())
        .max(1.0);
    (1e-9 * scale).min(0.5 * inst.linear_tolerance())
}

/// Builds the report from a dual solution.
pub fn recover(inst: &ProblemInstance, dual: &DualResult, config: &SolveConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let cfg = &config.eig;
    let eig_a = smallest_eig_a(inst, cfg)?;
    let lambda2 = dual.lambda_star;
    let near_degenerate = near_degenerate(eig_a, cfg.tol_cluster)
        || near_degenerate(&dual.eig_at_opt, cfg.tol_cluster);
    let mut diagnostics = Diagnostics {
        outer_iterations: dual.state.iteration,
        polish_steps: dual.polish_steps,
        dual_evaluations: dual.evals,
        matvecs: dual.matvecs,
        branch: Branch::Easy,
        lambda_min_a: eig_a.value,
        multiplicity_a: eig_a.multiplicity,
        deflations: 0,
        near_degenerate,
        timings: Timings::default(),
    };

    let (x, lambda1) = if !dual.hard_case {
        if dual.trs.hard_case {
            return Err(Error::Inconsistent("hard-case t-step without hard-case dual".into()));
        }
        (dual.trs.x.clone(), dual.trs.lambda1)
    } else {
        if let Some(cert) = gap_test(inst, dual, config)? {
            diagnostics.branch = Branch::Gap;
            diagnostics.timings.recovery_ms = ms(start);
            return Ok(SolveReport {
                status: Status::DualityGap,
                x_star: None,
                objective: dual.d_star,
                dual_value: dual.d_star,
                lambda1: -eig_a.value,
                lambda2,
                kkt: None,
                gap_certificate: Some(cert),
                diagnostics,
            });
        }
        let lambda1 = dual.trs.lambda1;
        let x_cand = &dual.trs.x;
        let lam2 = if lambda2 <= lambda_tolerance(inst) { 0.0 } else { lambda2 };
        let ball_inactive = lambda1 <= pd_threshold(inst);
        let x = if ball_inactive && lam2 == 0.0 && inst.is_feasible(x_cand) {
            diagnostics.branch = Branch::HardInterior;
            x_cand.clone()
        } else {
            match eig_a.multiplicity {
                1 => {
                    diagnostics.branch = Branch::HardMult1;
                    complete_mult1(inst, x_cand, &eig_a.basis[0])?
                }
                2 => {
                    diagnostics.branch = Branch::HardMult2;
                    complete_mult2(inst, x_cand, &eig_a.basis[0], &eig_a.basis[1], lam2)?
                }
                _ => {
                    let defl = deflate_and_reduce(inst, eig_a)?;
                    diagnostics.branch = Branch::Deflated;
                    diagnostics.deflations = defl.removed.len();
                    complete_mult2(inst, x_cand, &defl.kept[0], &defl.kept[1], lam2)?
                }
            }
        };
        (x, lambda1)
    };

    let kkt = kkt_residuals(inst, &x, lambda1, lambda2)?;
    diagnostics.timings.recovery_ms = ms(start);
    Ok(SolveReport {
        status: Status::Solved,
        objective: inst.objective(&x),
        x_star: Some(x),
        dual_value: dual.d_star,
        lambda1,
        lambda2,
        kkt: Some(kkt),
        gap_certificate: None,
        diagnostics,
    })
}

fn near_degenerate(e: &EigResult, tol_cluster: f64) -> bool {
    e.gap()
        .is_some_and(|g| g < 10.0 * tol_cluster * e.value.abs().max(1.0))
}

/// Real roots of `alpha^2 + 2 p alpha + q = 0`, larger first. Slightly
/// negative discriminants are clamped.
fn boundary_roots(p: f64, q: f64, slack: f64) -> Option<(f64, f64)> {
    let disc = p * p - q;
    if disc < -slack {
        return None;
    }
    let s = disc.max(0.0).sqrt();
    // Avoid cancellation in the smaller-magnitude root.
    let big = if p >= 0.0 { -p - s } else { -p + s };
    let small = if big != 0.0 { q / big } else { 0.0 };
    Some(if big >= small { (big, small) } else { (small, big) })
}

/// Certificate of a positive duality gap, when one exists.
pub fn gap_test(
    inst: &ProblemInstance,
    dual: &DualResult,
    config: &SolveConfig,
) -> Result<Option<GapCertificate>> {
    let cfg = &config.eig;
    let eig_a = smallest_eig_a(inst, cfg)?;
    if !dual.hard_case
        || eig_a.multiplicity != 1
        || eig_a.value >= -pd_threshold(inst)
        || dual.lambda_star <= lambda_tolerance(inst)
    {
        return Ok(None);
    }
    let z = &eig_a.basis[0];
    let x = &dual.trs.x;
    let p = dot(x, z);
    let q = dot(x, x) - inst.delta;
    let Some((a1, a2)) = boundary_roots(p, q, 1e-6 * inst.delta) else {
        return Ok(None);
    };
    let mut x1 = x.clone();
    axpy(a1, z, &mut x1);
    let mut x2 = x.clone();
    axpy(a2, z, &mut x2);
    let s1 = dot(&inst.b, &x1) - inst.c;
    let s2 = dot(&inst.b, &x2) - inst.c;
    let margin = side_margin(inst);
    if !(s1 * s2 < 0.0 && s1.abs() > margin && s2.abs() > margin) {
        return Ok(None);
    }
    // Re-verify stationarity of both points before trusting the signs.
    let mu = dual.lambda_star;
    let g = shifted_linear_term(inst, mu);
    let tol = 1e-6 * norm2(&g).max(1.0);
    for xi in [&x1, &x2] {
        let mut r = vec![0.0; inst.n()];
        inst.matrix.matvec(xi, &mut r);
        for i in 0..r.len() {
            r[i] -= eig_a.value * xi[i] + g[i];
        }
        let ball = (dot(xi, xi) - inst.delta).abs();
        if norm2(&r) > tol || ball > 1e-8 * inst.delta.max(1.0) {
            return Ok(None);
        }
    }
    Ok(Some(GapCertificate {
        x1,
        x2,
        mu,
        signs: (s1, s2),
    }))
}

/// Picks among boundary candidates: feasible first, then smaller objective,
/// then smaller slack `c - b^T x`.
fn pick_best(inst: &ProblemInstance, candidates: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let tie = 1e-12 * inst.scale();
    candidates
        .into_iter()
        .filter(|x| dot(&inst.b, x) - inst.c <= inst.linear_tolerance())
        .map(|x| (inst.objective(&x), inst.c - dot(&inst.b, &x), x))
        .min_by(|l, r| {
            if (l.0 - r.0).abs() <= tie {
                l.1.total_cmp(&r.1)
            } else {
                l.0.total_cmp(&r.0)
            }
        })
        .map(|(_, _, x)| x)
}

/// `x_cand + alpha z` on the sphere `||x||^2 = delta`, choosing the feasible
/// root with the smaller objective.
pub fn complete_mult1(inst: &ProblemInstance, x_cand: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let p = dot(x_cand, z) / dot(z, z);
    let q = (dot(x_cand, x_cand) - inst.delta) / dot(z, z);
    let (a1, a2) = boundary_roots(p, q, 1e-6 * inst.delta).ok_or_else(|| {
        Error::Inconsistent("candidate lies outside the ball; no boundary completion".into())
    })?;
    let make = |alpha: f64| {
        let mut x = x_cand.to_vec();
        axpy(alpha, z, &mut x);
        x
    };
    pick_best(inst, vec![make(a1), make(a2)]).ok_or_else(|| {
        Error::Inconsistent("neither boundary completion satisfies the linear constraint".into())
    })
}

/// Completion inside a two-dimensional eigenspace spanned by orthonormal
/// `z1`, `z2`.
///
/// With `l* = 0` and the candidate feasible, the move keeps `b^T x` fixed.
/// Otherwise the point is the intersection of the circle `||x||^2 = delta`
/// with the line `b^T x = c` inside `x_cand + span{z1, z2}`.
pub fn complete_mult2(
    inst: &ProblemInstance,
    x_cand: &[f64],
    z1: &[f64],
    z2: &[f64],
    lambda_star: f64,
) -> Result<Vec<f64>> {
    // In coordinates u = alpha + p the sphere reads ||u||^2 = r2.
    let p = [dot(x_cand, z1), dot(x_cand, z2)];
    let beta = [dot(&inst.b, z1), dot(&inst.b, z2)];
    let r2 = inst.delta - dot(x_cand, x_cand) + p[0] * p[0] + p[1] * p[1];
    let bx = dot(&inst.b, x_cand);
    let bnorm = beta[0].hypot(beta[1]);
    let build = |u: [f64; 2]| {
        let mut x = x_cand.to_vec();
        axpy(u[0] - p[0], z1, &mut x);
        axpy(u[1] - p[1], z2, &mut x);
        x
    };
    let tiny = 1e-12 * norm2(&inst.b).max(1.0);

    let on_line = (bx - inst.c).abs() <= inst.linear_tolerance();
    let keep_side = lambda_star == 0.0 && bx - inst.c <= inst.linear_tolerance();
    if keep_side || (bnorm <= tiny && on_line) {
        // Direction inside the plane that leaves b^T x unchanged.
        let d = if bnorm <= tiny {
            [1.0, 0.0]
        } else {
            [-beta[1] / bnorm, beta[0] / bnorm]
        };
        let pd = p[0] * d[0] + p[1] * d[1];
        let q = p[0] * p[0] + p[1] * p[1] - r2;
        let (s1, s2) = boundary_roots(pd, q, 1e-6 * inst.delta).ok_or_else(|| {
            Error::Inconsistent("candidate lies outside the ball; no boundary completion".into())
        })?;
        let at = |s: f64| build([p[0] + s * d[0], p[1] + s * d[1]]);
        return pick_best(inst, vec![at(s1), at(s2)])
            .ok_or_else(|| Error::Inconsistent("completion violates the linear constraint".into()));
    }

    if bnorm <= tiny {
        return Err(Error::Inconsistent(
            "active linear constraint but b is orthogonal to the eigenspace".into(),
        ));
    }
    let gamma = inst.c - bx + beta[0] * p[0] + beta[1] * p[1];
    let foot = [gamma * beta[0] / (bnorm * bnorm), gamma * beta[1] / (bnorm * bnorm)];
    let h2 = r2 - (gamma / bnorm).powi(2);
    if h2 < -1e-6 * inst.delta {
        return Err(Error::Inconsistent(format!(
            "circle-line system has no solution (discriminant {h2:e})"
        )));
    }
    let h = h2.max(0.0).sqrt();
    let d = [-beta[1] / bnorm, beta[0] / bnorm];
    let plus = build([foot[0] + h * d[0], foot[1] + h * d[1]]);
    let minus = build([foot[0] - h * d[0], foot[1] - h * d[1]]);
    pick_best(inst, vec![plus, minus])
        .ok_or_else(|| Error::Inconsistent("circle-line completion is infeasible".into()))
}

/// `A + shift * sum_v v v^T`, applied without forming it.
pub struct DeflatedOperator<'a> {
    pub base: &'a CsrMatrix,
    pub directions: Vec<Vec<f64>>,
    pub shift: f64,
}

impl SymmetricOperator for DeflatedOperator<'_> {
    fn dim(&self) -> usize {
        self.base.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.base.matvec(x, y);
        for v in &self.directions {
            axpy(self.shift * dot(v, x), v, y);
        }
    }
}

/// Result of [`deflate_and_reduce`].
pub struct Deflation<'a> {
    pub operator: DeflatedOperator<'a>,
    /// Orthonormal basis of the eigenspace left after deflation; the first
    /// vector carries the whole projection of `b`.
    pub kept: [Vec<f64>; 2],
    /// The deflated directions, each orthogonal to `b`.
    pub removed: Vec<Vec<f64>>,
}

/// Removes eigenvectors orthogonal to `b` from a cluster of size at least 3
/// by the rank-one updates `A + shift v v^T`, until two directions remain.
pub fn deflate_and_reduce<'a>(inst: &'a ProblemInstance, eig_a: &EigResult) -> Result<Deflation<'a>> {
    let k = eig_a.basis.len();
    if k < 3 {
        return Err(Error::Inconsistent(format!(
            "deflation needs multiplicity above 2, got {k}"
        )));
    }
    // Reflect the cluster so that only the first vector sees b.
    let beta: Vec<f64> = eig_a.basis.iter().map(|z| dot(z, &inst.b)).collect();
    let bn = norm2(&beta);
    let mut rotated = eig_a.basis.clone();
    if bn > 0.0 {
        let mut u = beta.clone();
        u[0] += if u[0] >= 0.0 { bn } else { -bn };
        let uu = dot(&u, &u);
        let n = inst.n();
        rotated = (0..k)
            .map(|j| {
                let mut out = vec![0.0; n];
                for (i, z) in eig_a.basis.iter().enumerate() {
                    let h = if i == j { 1.0 } else { 0.0 } - 2.0 * u[i] * u[j] / uu;
                    if h != 0.0 {
                        axpy(h, z, &mut out);
                    }
                }
                out
            })
            .collect();
    }
    let bscale = norm2(&inst.b).max(1.0);
    for v in &rotated[1..] {
        if dot(v, &inst.b).abs() > 1e-8 * bscale {
            return Err(Error::Inconsistent(
                "no eigenvector orthogonal to b within tolerance".into(),
            ));
        }
    }
    let removed: Vec<Vec<f64>> = rotated.drain(2..).collect();
    let mut it = rotated.into_iter();
    let kept = [it.next().unwrap(), it.next().unwrap()];
    Ok(Deflation {
        operator: DeflatedOperator {
            base: &inst.matrix,
            directions: removed.clone(),
            shift: 1.0 + eig_a.value.abs(),
        },
        kept,
        removed,
    })
}

impl Deflation<'_> {
    /// The deflated problem as a standalone instance. Dense, for small `n`.
    pub fn to_instance(&self, inst: &ProblemInstance) -> Result<ProblemInstance> {
        let dense = self.operator.to_dense();
        ProblemInstance::new(
            CsrMatrix::from_dense_lower(&dense)?,
            inst.a.clone(),
            inst.b.clone(),
            inst.c,
            inst.delta,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::EigConfig;

    fn inst(diag: &[f64], a: &[f64], b: &[f64], c: f64) -> ProblemInstance {
        ProblemInstance::new(CsrMatrix::from_diagonal(diag), a.to_vec(), b.to_vec(), c, 1.0)
            .unwrap()
    }

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn easy_case_solution() {
        let p = inst(&[-2.0, 1.0], &[1.0, 0.0], &[0.0, 1.0], 5.0);
        let r = solve(&p, &SolveConfig::default()).unwrap();
        assert_eq!(r.status, Status::Solved);
        assert_eq!(r.diagnostics.branch, Branch::Easy);
        let x = r.x_star.unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && x[1].abs() < 1e-8);
        assert!((r.objective + 4.0).abs() < 1e-8);
        assert!((r.lambda1 - 3.0).abs() < 1e-8);
        assert!(r.lambda2.abs() < 1e-12);
    }

    #[test]
    fn hard_case_double_eigenvalue() {
        let p = inst(&[-1.0, -1.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], 10.0);
        let r = solve(&p, &SolveConfig::default()).unwrap();
        assert_eq!(r.status, Status::Solved);
        assert_eq!(r.diagnostics.branch, Branch::HardMult2);
        let x = r.x_star.unwrap();
        assert!((x[2] - 0.5).abs() < 1e-10);
        assert!((x[0] * x[0] + x[1] * x[1] - 0.75).abs() < 1e-10);
        assert!((r.objective + 1.5).abs() < 1e-10);
    }

    #[test]
    fn gap_fixture_certificate() {
        let p = inst(&[-1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], 0.0);
        let r = solve(&p, &SolveConfig::default()).unwrap();
        assert_eq!(r.status, Status::DualityGap);
        assert!((r.objective + 1.0).abs() < 1e-6);
        let cert = r.gap_certificate.unwrap();
        assert!((cert.x1[0].abs() - 1.0).abs() < 1e-6);
        assert!((cert.x1[0] + cert.x2[0]).abs() < 1e-6);
        assert!((cert.signs.0 * cert.signs.1 + 4.0).abs() < 1e-5);
    }

    #[test]
    fn mult1_completion_cases() {
        let p = inst(&[-1.0, 1.0, 2.0], &[0.0; 3], &[0.0; 3], 1.0);
        let x = complete_mult1(&p, &[0.0; 3], &e(3, 0)).unwrap();
        assert!((x[0].abs() - 1.0).abs() < 1e-15);
        let x = complete_mult1(&p, &[0.0, 0.0, 0.5], &e(3, 0)).unwrap();
        assert!((x[0].abs() - 0.75f64.sqrt()).abs() < 1e-15);
        let on = [0.6, 0.8, 0.0];
        let x = complete_mult1(&p, &on, &e(3, 1)).unwrap();
        // Both roots (0 and -1.6) lie on the sphere with equal objective
        // here; slack ties keep one of them.
        assert!((dot(&x, &x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mult2_circle_line() {
        let p = inst(&[-1.0, -1.0, 1.0], &[0.0; 3], &[1.0, 0.0, 0.0], 0.6);
        let x = complete_mult2(&p, &[0.0; 3], &e(3, 0), &e(3, 1), 0.5).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-15);
        assert!((x[1].abs() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mult2_degenerate_circle() {
        let p = inst(&[-1.0, -1.0, 1.0], &[0.0; 3], &[0.0, 0.0, 1.0], 1.0);
        let x = complete_mult2(&p, &[0.0, 0.0, 1.0], &e(3, 0), &e(3, 1), 0.3).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn deflation_keeps_b_direction() {
        let p = inst(&[-1.0, -1.0, -1.0, 2.0], &[0.0; 4], &[0.0, 0.0, 1.0, 0.0], 1.0);
        let eig_a = smallest_eig_a(&p, &EigConfig::default()).unwrap();
        let d = deflate_and_reduce(&p, eig_a).unwrap();
        assert_eq!(d.removed.len(), 1);
        assert!(dot(&d.removed[0], &p.b).abs() < 1e-15);
        assert!((dot(&d.kept[0], &p.b).abs() - 1.0).abs() < 1e-15);
        let deflated = d.to_instance(&p).unwrap();
        let e2 = smallest_eig_a(&deflated, &EigConfig::default()).unwrap();
        assert_eq!(e2.multiplicity, 2);
        assert!((e2.value + 1.0).abs() < 1e-14);
    }

    #[test]
    fn deflation_count_matches_multiplicity() {
        for (k, expect) in [(3usize, 1usize), (4, 2)] {
            let mut d = vec![-1.0; k];
            d.push(3.0);
            let p = inst(&d, &vec![0.0; k + 1], &vec![0.0; k + 1], 1.0);
            let eig_a = smallest_eig_a(&p, &EigConfig::default()).unwrap();
            assert_eq!(deflate_and_reduce(&p, eig_a).unwrap().removed.len(), expect);
        }
    }
}
