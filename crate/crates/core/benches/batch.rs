use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use etrs_core::batch::{solve_many, solve_many_seq};
use etrs_core::instances::{generate, GenClass, GenSpec};
use etrs_core::{CsrMatrix, SolveConfig};

fn instances(count: usize, n: usize) -> Vec<etrs_core::ProblemInstance> {
    (0..count as u64)
        .map(|seed| {
            generate(&GenSpec {
                class_id: GenClass::Class1,
                n,
                density: 0.05,
                m: 2,
                seed,
                ..GenSpec::default()
            })
            .expect("generator")
        })
        .collect()
}

fn batch_solve(c: &mut Criterion) {
    let cfg = SolveConfig::default();
    let mut group = c.benchmark_group("batch_solve");
    group.sample_size(10);
    for n in [40, 120] {
        let insts = instances(8, n);
        group.bench_with_input(BenchmarkId::new("parallel", n), &insts, |bch, insts| {
            bch.iter(|| black_box(solve_many(insts, &cfg)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &insts, |bch, insts| {
            bch.iter(|| black_box(solve_many_seq(insts, &cfg)))
        });
    }
    group.finish();
}

fn matvec(c: &mut Criterion) {
    let n = 200_000;
    let mut entries = Vec::with_capacity(3 * n);
    for i in 0..n {
        entries.push((i, i, 2.0));
        if i > 0 {
            entries.push((i, i - 1, -1.0));
        }
        if i >= 7 {
            entries.push((i, i - 7, 0.25));
        }
    }
    let m = CsrMatrix::from_triangle(n, &entries).expect("matrix");
    let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let mut y = vec![0.0; n];
    let mut group = c.benchmark_group("matvec");
    group.bench_function("parallel", |bch| bch.iter(|| m.matvec_par(black_box(&x), &mut y)));
    group.bench_function("sequential", |bch| bch.iter(|| m.matvec_seq(black_box(&x), &mut y)));
    group.finish();
}

criterion_group!(benches, batch_solve, matvec);
criterion_main!(benches);
