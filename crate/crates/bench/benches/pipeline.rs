use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use delaystab_bench::reference_setup;
use delaystab_core::linalg::solve_lyapunov;
use delaystab_core::{
    assemble, compute_spectrum, find_minimal_n, project_sources, simulate, CertificateKind,
    Measurement, PlantSpec, SearchGrid, SimulationConfig,
};
use nalgebra::DMatrix;

fn spectrum(c: &mut Criterion) {
    let plant = PlantSpec::reference(Measurement::Dirichlet);
    let mut group = c.benchmark_group("spectrum");
    group.sample_size(10);
    for (modes, grid) in [(40, 1001), (120, 4001)] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{modes}x{grid}")), &(modes, grid), |b, &(m, g)| {
            b.iter(|| project_sources(&compute_spectrum(black_box(&plant), m, g).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn certification(c: &mut Criterion) {
    let mut group = c.benchmark_group("certification");
    group.sample_size(10);
    for kind in CertificateKind::ALL {
        let (spec, gains) = reference_setup(kind.measurement(), 120, 4001);
        let grid = SearchGrid::default_for(kind, 20);
        group.bench_function(format!("theorem{}", kind.number()), |b| {
            b.iter(|| find_minimal_n(&spec, &gains, kind, black_box(&grid)).unwrap().n_star)
        });
    }
    group.finish();
}

fn lyapunov(c: &mut Criterion) {
    let (spec, gains) = reference_setup(Measurement::Dirichlet, 120, 4001);
    let mut group = c.benchmark_group("lyapunov");
    for n in [10, 40] {
        let mats = assemble(&spec, &gains, n).unwrap();
        let dim = mats.f.nrows();
        let a = &mats.f + DMatrix::<f64>::identity(dim, dim) * mats.delta;
        let rhs = -DMatrix::<f64>::identity(dim, dim);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_lyapunov(black_box(&a), &rhs).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let (spec, gains) = reference_setup(Measurement::Dirichlet, 120, 4001);
    let cfg = SimulationConfig {
        record_stride: 50,
        ..SimulationConfig::for_delay(1.0, 4, 15.0)
    };
    let z0 = |x: f64| 10.0 * x * x * (x - 1.0);
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("reference_T15", |b| {
        b.iter(|| simulate(&spec, &gains, black_box(&cfg), &z0).unwrap().u.len())
    });
    group.finish();
}

criterion_group!(benches, spectrum, certification, lyapunov, simulation);
criterion_main!(benches);
