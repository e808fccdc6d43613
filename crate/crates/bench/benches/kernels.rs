use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use obstacle_core::estimators::{build_partition, fit_layer, hermite_channels, QuadratureRule};
use obstacle_core::model::make_reduced_put;
use obstacle_core::scheme::{solve_quadrature, Mesh};
use obstacle_core::{
    binomial_american_put, make_geometric_put, simulate, solve_mc, GeometricPutParams, SchemeConfig,
    TimeGrid,
};

fn bench_simulate(c: &mut Criterion) {
    let spec = make_geometric_put(&GeometricPutParams::default()).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for paths in [10_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::from_parameter(paths), &paths, |b, &n| {
            b.iter(|| simulate(&spec, &grid, n, black_box(1)).unwrap())
        });
    }
    group.finish();
}

fn bench_fit_layer(c: &mut Criterion) {
    let spec = make_geometric_put(&GeometricPutParams::default()).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let ens = simulate(&spec, &grid, 100_000, 3).unwrap();
    let xs = ens.layer(2);
    let channels = hermite_channels(3);
    let targets: Vec<f64> = xs
        .chunks_exact(3)
        .flat_map(|x| (0..channels).map(move |k| x[k % 3] * (k + 1) as f64))
        .collect();
    let mut group = c.benchmark_group("fit_layer");
    group.sample_size(10);
    group.bench_function("3d_100k", |b| {
        b.iter(|| {
            let part = build_partition(&xs, 3, 8, 40).unwrap();
            fit_layer(&part, &xs, black_box(&targets), channels).unwrap()
        })
    });
    group.finish();
}

fn bench_solvers(c: &mut Criterion) {
    let params = GeometricPutParams::default();
    let mut group = c.benchmark_group("solvers");
    group.sample_size(10);
    group.bench_function("binomial_2000", |b| {
        b.iter(|| binomial_american_put(&params.reduced(), 8.0, 1.0, black_box(2000)).unwrap())
    });
    let spec = make_geometric_put(&params).unwrap();
    let grid = TimeGrid::new(1.0, 5).unwrap();
    group.bench_function("mc_3d_n5_50k", |b| {
        b.iter(|| solve_mc(&spec, &grid, 50_000, black_box(1), &SchemeConfig::default()).unwrap())
    });
    let reduced = make_reduced_put(&params).unwrap();
    let mesh = Mesh::over_domain(&reduced, 400).unwrap();
    let rule = QuadratureRule::gauss_hermite(20, 1).unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    group.bench_function("quadrature_1d_n50", |b| {
        b.iter(|| solve_quadrature(&reduced, &grid, &mesh, &rule, &SchemeConfig::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_simulate, bench_fit_layer, bench_solvers);
criterion_main!(benches);
