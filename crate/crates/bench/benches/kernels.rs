use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use exitset_core::conformal::{compute_rk, normalize, CurvatureField};
use exitset_core::exitset::{build_kdp, solve_alphas, DoublePeakSpec};
use exitset_core::flows::{flow_step, FlowKind};
use exitset_core::{ScalarField, TorusGrid};

fn state(size: usize) -> (ScalarField, CurvatureField) {
    let grid = TorusGrid::new(3, size, 2.0 * std::f64::consts::PI).unwrap();
    let u = normalize(&ScalarField::random_smooth(&grid, 6, 2, 1).map(|x| 1.0 + 0.2 * x)).unwrap();
    let k = CurvatureField::new(ScalarField::from_fn(&grid, |x| -1.0 + 0.5 * x[0].cos())).unwrap();
    (u, k)
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for size in [32, 64] {
        let (u, k) = state(size);
        group.bench_with_input(BenchmarkId::new("laplacian", size), &u, |b, u| b.iter(|| black_box(u.laplacian())));
        group.bench_with_input(BenchmarkId::new("compute_rk", size), &u, |b, u| {
            b.iter(|| black_box(compute_rk(u, &k)))
        });
    }
    group.finish();
}

fn flows(c: &mut Criterion) {
    let (u, k) = state(32);
    let mut group = c.benchmark_group("flow_step");
    for kind in [FlowKind::Yamabe, FlowKind::Exit] {
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| black_box(flow_step(&u, &k, kind, 1e-4, true).unwrap()))
        });
    }
    group.finish();
}

fn slices(c: &mut Criterion) {
    let kdp = build_kdp(&DoublePeakSpec::standard(3, 64)).unwrap();
    let mut group = c.benchmark_group("exitset");
    group.sample_size(10);
    group.bench_function("solve_alphas_n64", |b| b.iter(|| black_box(solve_alphas(&kdp, 5.0, 0.01, 1).unwrap())));
    group.finish();
}

criterion_group!(benches, spectral, flows, slices);
criterion_main!(benches);
