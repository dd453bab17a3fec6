use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shellrig_core::compatibility::gcm_residuals;
use shellrig_core::energy::energy_p;
use shellrig_core::minimize::{gradient, MinimizeConfig};
use shellrig_core::par;
use shellrig_core::scenarios::{perturb, Builtin};

// 1 = sequential pool, 0 = rayon default.
const POOLS: [(usize, &str); 2] = [(1, "sequential"), (0, "parallel")];

fn energy(c: &mut Criterion) {
    let s = Builtin::Cylinder.scenario(64).unwrap();
    let f = perturb(&s.f, 0.02, 1).unwrap();
    let mut group = c.benchmark_group("energy_p_64");
    for (threads, label) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |bench, &t| {
            bench.iter(|| par::with_threads(t, || energy_p(black_box(&f), &s.g, &s.b, 2.0).unwrap().total))
        });
    }
    group.finish();
}

fn gcm(c: &mut Criterion) {
    let s = Builtin::EquatorBand.scenario(64).unwrap();
    let mut group = c.benchmark_group("gcm_64");
    for (threads, label) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |bench, &t| {
            bench.iter(|| par::with_threads(t, || gcm_residuals(black_box(&s.g), &s.b, 1.0).unwrap().sup()))
        });
    }
    group.finish();
}

fn grad(c: &mut Criterion) {
    let s = Builtin::GeodesicBand.scenario(16).unwrap();
    let f = perturb(&s.f, 0.02, 2).unwrap();
    let cfg = MinimizeConfig::default();
    let mut group = c.benchmark_group("gradient_16");
    group.sample_size(10);
    for (threads, label) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |bench, &t| {
            bench.iter(|| par::with_threads(t, || gradient(black_box(&f), &s.g, &s.b, &cfg).unwrap().len()))
        });
    }
    group.finish();
}

criterion_group!(benches, energy, gcm, grad);
criterion_main!(benches);
