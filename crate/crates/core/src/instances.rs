//! Random test families.
//!
//! Class 1 plants a smallest eigenvalue of multiplicity `m` by embedding a
//! random sparse block next to a scaled identity and permuting. Class 2 fixes
//! `b = e1` and `c = 1`. A dense fully random family is included for tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::{smallest_eigpair, smallest_eig_a, EigConfig};
use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::sparse::{dot, norm2, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenClass {
    Class1,
    Class2,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub class_id: GenClass,
    pub n: usize,
    pub density: f64,
    /// Multiplicity of the planted smallest eigenvalue (class 1).
    pub m: usize,
    /// Distance between the planted eigenvalue and the spectrum of the random
    /// block (class 1).
    pub alpha: f64,
    pub seed: u64,
    /// Apply a random symmetric permutation (class 1).
    pub permute: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            class_id: GenClass::Class1,
            n: 100,
            density: 0.01,
            m: 2,
            alpha: 1.0,
            seed: 0,
            permute: true,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut *rng);
            scale * v
        })
        .collect()
}

/// Lower-triangle entries of a random sparse symmetric `k x k` matrix with
/// about `density * k^2` stored entries, values standard normal.
pub fn random_sparse_symmetric(
    k: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let target = (density * (k * k) as f64 / 2.0).round() as usize;
    let mut entries = Vec::with_capacity(target);
    for _ in 0..target {
        let i = rng.gen_range(0..k);
        let j = rng.gen_range(0..k);
        let v: f64 = StandardNormal.sample(&mut *rng);
        entries.push((i.max(j), i.min(j), v));
    }
    entries
}

/// `c` uniform in `[b^T x - 1, b^T x + 1]` for a random `x` strictly inside
/// the ball, redrawn until the Slater condition holds.
fn interior_level(rng: &mut ChaCha8Rng, b: &[f64], delta: f64) -> Result<f64> {
    let floor = -norm2(b) * delta.sqrt();
    for _ in 0..100 {
        let dir = normal_vec(rng, b.len(), 1.0);
        let radius = delta.sqrt() * rng.gen_range(0.0..0.9) / norm2(&dir).max(f64::MIN_POSITIVE);
        let center = dot(b, &dir) * radius;
        let c = center + rng.gen_range(-1.0..1.0);
        if floor < c {
            return Ok(c);
        }
    }
    Err(Error::Inconsistent("could not draw a level satisfying Slater".into()))
}

pub fn generate_class1(spec: &GenSpec) -> Result<ProblemInstance> {
    let (n, m) = (spec.n, spec.m);
    if m == 0 || m >= n {
        return Err(Error::Dimension(format!("class 1 needs 1 <= m < n, got m = {m}, n = {n}")));
    }
    if spec.alpha.is_nan() || spec.alpha <= 0.0 {
        return Err(Error::Dimension("class 1 needs alpha > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = n - m;
    let mut entries = random_sparse_symmetric(k, spec.density, &mut rng);
    let block = CsrMatrix::from_triangle(k, &entries)?;
    let lmin0 = smallest_eigpair(&block, 2, &EigConfig::default(), &[])?.value;
    for j in 0..m {
        entries.push((k + j, k + j, lmin0 - spec.alpha));
    }
    let mut matrix = CsrMatrix::from_triangle(n, &entries)?;
    if spec.permute {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        matrix = matrix.permuted(&perm);
    }
    let a = normal_vec(&mut rng, n, 10.0);
    let b = normal_vec(&mut rng, n, 10.0);
    let delta = 1.0;
    let c = interior_level(&mut rng, &b, delta)?;
    ProblemInstance::new(matrix, a, b, c, delta)
}

pub fn generate_class2(spec: &GenSpec) -> Result<ProblemInstance> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::Dimension("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut matrix = CsrMatrix::from_triangle(n, &random_sparse_symmetric(n, spec.density, &mut rng))?;
    let lmin = smallest_eigpair(&matrix, 2, &EigConfig::default(), &[])?.value;
    if lmin > -0.1 {
        matrix = matrix.shifted(-(lmin + 0.1));
    }
    let a = normal_vec(&mut rng, n, 10.0);
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    ProblemInstance::new(matrix, a, b, 1.0, 1.0)
}

/// Dense symmetric `A` with normal entries, normal `a` and `b`, `delta` in
/// `[0.5, 2]` and `c` through an interior point.
pub fn random_instance(n: usize, seed: u64) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = StandardNormal.sample(&mut rng);
            entries.push((i, j, v));
        }
    }
    let mut matrix = CsrMatrix::from_triangle(n, &entries)?;
    let lmin = smallest_eigpair(&matrix, 2, &EigConfig::default(), &[])?.value;
    if lmin > -0.1 {
        matrix = matrix.shifted(-(lmin + 0.1));
    }
    let a = normal_vec(&mut rng, n, 1.0);
    let b = normal_vec(&mut rng, n, 1.0);
    let delta = rng.gen_range(0.5..2.0);
    let c = interior_level(&mut rng, &b, delta)?;
    ProblemInstance::new(matrix, a, b, c, delta)
}

pub fn generate(spec: &GenSpec) -> Result<ProblemInstance> {
    match spec.class_id {
        GenClass::Class1 => generate_class1(spec),
        GenClass::Class2 => generate_class2(spec),
        GenClass::Random => random_instance(spec.n, spec.seed),
    }
}

/// Copy of `inst` with `a` projected off the eigenspace of `lambda_min(A)`,
/// which makes the pure trust-region problem (`b = 0`) a hard case whenever
/// the resulting interior point fits in the ball.
pub fn project_out_min_eigenspace(inst: &ProblemInstance, cfg: &EigConfig) -> Result<ProblemInstance> {
    let eig = smallest_eig_a(inst, cfg)?;
    let mut a = inst.a.clone();
    for _ in 0..2 {
        for z in &eig.basis {
            let h = dot(z, &a);
            for (ai, zi) in a.iter_mut().zip(z) {
                *ai -= h * zi;
            }
        }
    }
    ProblemInstance::new(inst.matrix.clone(), a, inst.b.clone(), inst.c, inst.delta)
}

/// Copy of `inst` with the linear constraint removed (`b = 0`, `c = 1`).
pub fn without_linear_constraint(inst: &ProblemInstance) -> Result<ProblemInstance> {
    ProblemInstance::new(inst.matrix.clone(), inst.a.clone(), vec![0.0; inst.n()], 1.0, inst.delta)
}
