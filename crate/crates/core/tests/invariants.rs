//! Property tests over seeded random instances.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use etrs_core::dual::solve_dual;
use etrs_core::eigen::{anchor_basis, projector_distance, smallest_eig_a, smallest_eigpair};
use etrs_core::instances::{generate, project_out_min_eigenspace, GenClass, GenSpec};
use etrs_core::io::{
    load_instance, write_matrix_market, write_vector, InstanceMeta, ReportDocument,
};
use etrs_core::oracle::oracle_solve;
use etrs_core::recovery::{complete_mult1, deflate_and_reduce};
use etrs_core::trs::eval_k;
use etrs_core::{
    kkt_residuals, solve, CsrMatrix, EigConfig, EigResult, ProblemInstance, SolveConfig, Status,
};

fn class_of(k: u8) -> GenClass {
    match k % 3 {
        0 => GenClass::Class1,
        1 => GenClass::Class2,
        _ => GenClass::Random,
    }
}

fn instance(class: u8, n: usize, m: usize, seed: u64) -> ProblemInstance {
    generate(&GenSpec {
        class_id: class_of(class),
        n,
        m,
        density: 0.15,
        seed,
        ..GenSpec::default()
    })
    .unwrap()
}

fn any_instance() -> impl Strategy<Value = ProblemInstance> {
    (0u8..3, 10usize..=60, 1usize..=3, any::<u64>()).prop_map(|(c, n, m, s)| instance(c, n, m, s))
}

fn random_perm(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn k_is_concave(inst in any_instance(), u in prop::array::uniform4(0.0f64..1.0)) {
        let cfg = EigConfig::default();
        let span = 2.0 * inst.scale();
        let p1 = (span * (2.0 * u[0] - 1.0), 10.0 * u[1]);
        let p2 = (span * (2.0 * u[2] - 1.0), 10.0 * u[3]);
        let mid = (0.5 * (p1.0 + p2.0), 0.5 * (p1.1 + p2.1));
        let k = |p: (f64, f64)| eval_k(&inst, p.0, p.1, &cfg).unwrap().k_value;
        prop_assert!(k(mid) >= 0.5 * (k(p1) + k(p2)) - 1e-9 * inst.scale());
    }

    #[test]
    fn gradient_matches_finite_differences(inst in any_instance(), u in 0.0f64..1.0, l in 0.0f64..5.0) {
        let cfg = EigConfig::default();
        let t = inst.scale() * (2.0 * u - 1.0);
        let e = eval_k(&inst, t, l, &cfg).unwrap();
        let gap = e.eig.gap().unwrap_or(f64::INFINITY);
        prop_assume!(e.differentiable && e.eig.anchored.is_some() && gap > 1e-3);
        let k = |t: f64, l: f64| eval_k(&inst, t, l, &cfg).unwrap().k_value;
        let ht = 1e-6 * t.abs().max(1.0);
        let hl = 1e-6 * l.abs().max(1.0);
        let fd_t = (k(t + ht, l) - k(t - ht, l)) / (2.0 * ht);
        let fd_l = (k(t, l + hl) - k(t, l - hl)) / (2.0 * hl);
        prop_assert!((fd_t - e.grad_t).abs() <= 1e-5 * e.grad_t.abs().max(1.0), "t: {} vs {}", e.grad_t, fd_t);
        prop_assert!((fd_l - e.grad_lambda).abs() <= 1e-5 * e.grad_lambda.abs().max(1.0), "l: {} vs {}", e.grad_lambda, fd_l);
    }

    #[test]
    fn bordered_minimum_interlaces(inst in any_instance(), u in 0.0f64..1.0, l in 0.0f64..10.0) {
        let cfg = EigConfig::default();
        let lmin = smallest_eig_a(&inst, &cfg).unwrap().value;
        let t = 4.0 * inst.scale() * (2.0 * u - 1.0);
        let e = eval_k(&inst, t, l, &cfg).unwrap();
        prop_assert!(e.eig.value <= lmin + 1e-9 * lmin.abs().max(1.0));
    }

    #[test]
    fn alternation_ascends_and_respects_weak_duality(inst in any_instance()) {
        let dual = solve_dual(&inst, &SolveConfig::default()).unwrap();
        for w in dual.state.history.windows(2) {
            prop_assert!(w[1].2 >= w[0].2 - 1e-12 * w[0].2.abs().max(1.0));
        }
        let p = oracle_solve(&inst).unwrap().p_star;
        prop_assert!(p >= dual.d_star - 1e-8 * inst.scale(), "p* {} d* {}", p, dual.d_star);
    }

    #[test]
    fn solve_is_permutation_invariant(inst in any_instance(), seed in any::<u64>()) {
        let cfg = SolveConfig::default();
        let r = solve(&inst, &cfg).unwrap();
        let perm = random_perm(inst.n(), seed);
        let rp = solve(&inst.permuted(&perm).unwrap(), &cfg).unwrap();
        prop_assert_eq!(r.status, rp.status);
        prop_assert!(rel(r.objective, rp.objective) <= 1e-8);
        if let (Some(k), Some(kp)) = (r.kkt, rp.kkt) {
            prop_assert!(k.worst_relative(&inst) <= 1e-7);
            prop_assert!(kp.worst_relative(&inst) <= 1e-7);
        }
        if r.status == Status::Solved {
            prop_assert!((r.objective - r.dual_value).abs() <= 1e-8 * r.dual_value.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_is_permutation_equivariant(inst in any_instance(), seed in any::<u64>()) {
        let o = oracle_solve(&inst).unwrap();
        let perm = random_perm(inst.n(), seed);
        let pinst = inst.permuted(&perm).unwrap();
        let op = oracle_solve(&pinst).unwrap();
        prop_assert!(rel(o.p_star, op.p_star) <= 1e-10);
        let moved: Vec<f64> = perm.iter().map(|&p| o.x[p]).collect();
        prop_assert!(rel(pinst.objective(&moved), op.p_star) <= 1e-10);
    }

    #[test]
    fn dense_and_iterative_eigensolves_agree(inst in any_instance(), u in 0.0f64..1.0, l in 0.0f64..5.0) {
        let dense = EigConfig::default();
        let iterative = EigConfig { dense_threshold: 0, ..EigConfig::default() };
        let a_dense = smallest_eigpair(&inst.matrix, 2, &dense, &[]).unwrap();
        let a_iter = smallest_eigpair(&inst.matrix, 2, &iterative, &[]).unwrap();
        prop_assert!(rel(a_dense.value, a_iter.value) <= 1e-8);
        prop_assert_eq!(a_dense.multiplicity, a_iter.multiplicity);
        let t = inst.scale() * (2.0 * u - 1.0);
        let kd = eval_k(&inst, t, l, &dense).unwrap().k_value;
        let fresh = ProblemInstance::new(inst.matrix.clone(), inst.a.clone(), inst.b.clone(), inst.c, inst.delta).unwrap();
        let ki = eval_k(&fresh, t, l, &iterative).unwrap().k_value;
        prop_assert!(rel(kd, ki) <= 1e-8, "{} vs {}", kd, ki);
    }

    #[test]
    fn anchoring_keeps_the_span(k in 1usize..=4, n in 6usize..=20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = nalgebra::DMatrix::<f64>::from_fn(n, k, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let q = raw.qr().q();
        let basis: Vec<Vec<f64>> = (0..k).map(|j| q.column(j).iter().copied().collect()).collect();
        let before = EigResult {
            value: 0.0,
            multiplicity: k,
            basis: basis.clone(),
            anchored: None,
            next_value: None,
            matvecs: 0,
        };
        let after = anchor_basis(before, 1e-6);
        prop_assert!(projector_distance(&basis, &after.basis) <= 1e-12);
        let anchored = after.anchored.unwrap();
        prop_assert!(after.basis[anchored][0] > 0.0);
        for (j, v) in after.basis.iter().enumerate() {
            if j != anchored {
                prop_assert!(v[0].abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn completion_keeps_stationarity(
        n in 3usize..=30,
        d in prop::collection::vec(0.0f64..3.0, 30),
        a in prop::collection::vec(-1.0f64..1.0, 30),
    ) {
        // A = diag(-1, d), a orthogonal to e1 and short enough that the
        // minimum-norm point is interior.
        let mut diag = vec![-1.0];
        diag.extend_from_slice(&d[..n - 1]);
        let mut av = vec![0.0];
        av.extend_from_slice(&a[..n - 1]);
        let x0: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { av[i] / (diag[i] + 1.0) }).collect();
        let norm0 = x0.iter().map(|v| v * v).sum::<f64>();
        let s = if norm0 > 0.25 { 0.5 / norm0.sqrt() } else { 1.0 };
        let av: Vec<f64> = av.iter().map(|v| s * v).collect();
        let x0: Vec<f64> = x0.iter().map(|v| s * v).collect();
        let inst = ProblemInstance::new(CsrMatrix::from_diagonal(&diag), av, vec![0.0; n], 1.0, 1.0).unwrap();
        let mut z = vec![0.0; n];
        z[0] = 1.0;
        let before = kkt_residuals(&inst, &x0, 1.0, 0.0).unwrap();
        let x = complete_mult1(&inst, &x0, &z).unwrap();
        let after = kkt_residuals(&inst, &x, 1.0, 0.0).unwrap();
        prop_assert!(after.kkt1 <= before.kkt1 + 1e-12);
        prop_assert!(after.primal_ball.abs() <= 1e-10);
    }

    #[test]
    fn deflation_keeps_optimal_value_and_multiplier(n in 12usize..=40, m in 3usize..=5, seed in any::<u64>()) {
        let cfg = SolveConfig::default();
        let base = generate(&GenSpec {
            class_id: GenClass::Class1,
            n,
            m,
            density: 0.2,
            seed,
            ..GenSpec::default()
        })
        .unwrap();
        let inst = project_out_min_eigenspace(&base, &cfg.eig).unwrap();
        let eig = smallest_eig_a(&inst, &cfg.eig).unwrap();
        prop_assume!(eig.multiplicity == m);
        let deflated = deflate_and_reduce(&inst, eig).unwrap().to_instance(&inst).unwrap();
        let r = solve(&inst, &cfg).unwrap();
        let rd = solve(&deflated, &cfg).unwrap();
        let tol = 1e-8 * inst.scale();
        prop_assert!(rel(r.objective, rd.objective) <= 1e-8, "{} vs {}", r.objective, rd.objective);
        prop_assert!((r.lambda1 - rd.lambda1).abs() <= tol, "l1 {} vs {}", r.lambda1, rd.lambda1);
        prop_assert!((r.lambda2 - rd.lambda2).abs() <= tol, "l2 {} vs {}", r.lambda2, rd.lambda2);
    }

    #[test]
    fn gap_reports_are_sound(
        n in 2usize..=12,
        d in prop::collection::vec(0.0f64..2.0, 12),
        eps in prop::collection::vec(-0.05f64..0.05, 12),
        c in -0.1f64..0.1,
    ) {
        // Perturbations of A = diag(-1, 0), a = e1, b = 2 e1, c = 0, which has
        // a positive gap.
        let mut diag = vec![-1.0];
        diag.extend_from_slice(&d[..n - 1]);
        let a: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { eps[i] }).collect();
        let b: Vec<f64> = (0..n).map(|i| if i == 0 { 2.0 } else { eps[(i + 5) % 12] }).collect();
        let inst = ProblemInstance::new(CsrMatrix::from_diagonal(&diag), a, b, c, 1.0).unwrap();
        let r = solve(&inst, &SolveConfig::default()).unwrap();
        let p = oracle_solve(&inst).unwrap().p_star;
        let tol = 1e-6 * p.abs().max(1.0);
        match r.status {
            Status::Solved => prop_assert!((r.objective - p).abs() <= tol, "{} vs {}", r.objective, p),
            Status::DualityGap => {
                prop_assert!(p - r.dual_value > 1e-6 * inst.scale(), "p* {} d* {}", p, r.dual_value);
                let cert = r.gap_certificate.unwrap();
                prop_assert!(cert.signs.0 * cert.signs.1 < 0.0);
                for x in [&cert.x1, &cert.x2] {
                    let nx: f64 = x.iter().map(|v| v * v).sum();
                    prop_assert!((nx - inst.delta).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn report_document_round_trips(inst in any_instance()) {
        let r = solve(&inst, &SolveConfig::default()).unwrap();
        let meta = InstanceMeta { n: inst.n(), nnz: inst.matrix.nnz(), class: None, seed: None };
        let doc = ReportDocument::from_report(&r, meta);
        let back = ReportDocument::from_json(&doc.to_json().unwrap()).unwrap();
        prop_assert_eq!(doc, back);
    }

    #[test]
    fn written_instances_load_back(inst in any_instance()) {
        let dir = tempfile::tempdir().unwrap();
        let (pm, pa, pb) = (dir.path().join("A.mtx"), dir.path().join("a.txt"), dir.path().join("b.txt"));
        write_matrix_market(&pm, &inst.matrix).unwrap();
        write_vector(&pa, &inst.a).unwrap();
        write_vector(&pb, &inst.b).unwrap();
        let back = load_instance(&pm, &pa, &pb, inst.c, inst.delta).unwrap();
        prop_assert_eq!(&back.matrix, &inst.matrix);
        prop_assert_eq!(&back.a, &inst.a);
        prop_assert_eq!(&back.b, &inst.b);
    }
}
