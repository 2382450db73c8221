use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use gradual_core::density::{fp_marginals, tv_samples, BinRule};
use gradual_core::flow::descend;
use gradual_core::sde::simulate;
use gradual_core::{DensityGrid, DriftField, FpConfig, GridSpec, SdeConfig, SdeScheme};

fn limit() -> DriftField {
    DriftField::limit(2.0, 4.0).unwrap()
}

fn fokker_planck(c: &mut Criterion) {
    let grid = GridSpec::new(-4.0, 4.0, 2001).unwrap();
    let rho0 = DensityGrid::point_mass(grid, 1.0).unwrap();
    let cfg = FpConfig::new(limit(), grid, 1e-3, 0.1);
    c.bench_function("fp_100_steps_n2001", |b| {
        b.iter(|| fp_marginals(&cfg, &rho0, &[0.1]).unwrap())
    });
}

fn sde(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_1000_paths_1000_steps");
    for scheme in [SdeScheme::TamedEuler, SdeScheme::DriftImplicit, SdeScheme::FlowSplitting] {
        let cfg = SdeConfig::new(limit(), 1.0, 1e-3, 1000, 1, 1.0).with_scheme(scheme);
        g.bench_function(format!("{scheme:?}"), |b| b.iter(|| simulate(&cfg).unwrap()));
    }
    g.finish();
}

fn descent(c: &mut Criterion) {
    let field = limit().as_scalar_field().clone();
    c.bench_function("descend_t_0.1", |b| b.iter(|| descend(&field, black_box(0.1)).unwrap()));
}

fn tv(c: &mut Criterion) {
    let a: Vec<f64> = (0..10_000).map(|i| ((i as f64 + 0.5) / 10_000.0 - 0.5) * 2.0).collect();
    let b: Vec<f64> = a.iter().map(|x| x * 1.1 + 0.05).collect();
    c.bench_function("tv_samples_1e4", |bn| {
        bn.iter(|| tv_samples(&a, &b, BinRule::FreedmanDiaconis).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = fokker_planck, sde, descent, tv
}
criterion_main!(kernels);
