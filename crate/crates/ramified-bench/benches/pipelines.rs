//! Benchmarks for the main pipelines: graph construction, Hodge
//! decomposition, the quasilinear solver, and the spectral assemblies.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ramified_core::forms::{harmonic_basis, hodge_decompose};
use ramified_core::pde::solve_quasilinear;
use ramified_core::quantum::{
    assemble_magnetic_hamiltonian, dirac_assemble, dirac_spectrum, MagneticConfig,
    MagneticConvention,
};
use ramified_core::{
    build_level, self_similar_measure, EdgeNonlinearity, FractalSpec, LevelGraph, MeasureWeights,
    OneForm, ScalarField,
};

fn gasket(level: usize) -> (Arc<LevelGraph>, MeasureWeights) {
    let g = build_level(&FractalSpec::gasket(), level).unwrap();
    let m = self_similar_measure(&g).unwrap();
    (g, m)
}

fn bench_build(c: &mut Criterion) {
    let spec = FractalSpec::gasket();
    let mut group = c.benchmark_group("build_level");
    for level in [3usize, 4, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, &n| {
            b.iter(|| build_level(&spec, n).unwrap());
        });
    }
    group.finish();
}

fn bench_hodge(c: &mut Criterion) {
    let mut group = c.benchmark_group("hodge_decompose");
    for level in [2usize, 3] {
        let (g, m) = gasket(level);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = OneForm::from_fn(&g, |_| rng.gen_range(-1.0..1.0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, _| {
            b.iter(|| hodge_decompose(&m, &v).unwrap());
        });
    }
    group.finish();
}

fn bench_harmonic_basis(c: &mut Criterion) {
    let (_, m) = gasket(3);
    c.bench_function("harmonic_basis/gasket-3", |b| {
        b.iter(|| harmonic_basis(&m).unwrap());
    });
}

fn bench_quasilinear(c: &mut Criterion) {
    let (g, m) = gasket(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = ScalarField::from_fn(&g, |_| rng.gen_range(-1.0..1.0))
        .unwrap()
        .center(&m)
        .unwrap();
    let a = EdgeNonlinearity::scaled_monotone(1.0, 0.5).unwrap();
    c.bench_function("solve_quasilinear/gasket-3", |b| {
        b.iter(|| solve_quasilinear(&m, &a, &f, 1e-10).unwrap());
    });
}

fn bench_spectra(c: &mut Criterion) {
    let (g, m) = gasket(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = OneForm::from_fn(&g, |_| rng.gen_range(-1.0..1.0)).unwrap();
    let potential = ScalarField::from_fn(&g, |_| rng.gen_range(0.0..1.0)).unwrap();
    let cfg = MagneticConfig::new(a, potential, MagneticConvention::Exponential).unwrap();
    c.bench_function("magnetic_spectrum/gasket-2", |b| {
        b.iter(|| assemble_magnetic_hamiltonian(&cfg, &m).unwrap().spectrum());
    });
    c.bench_function("dirac_spectrum/gasket-2", |b| {
        b.iter(|| dirac_spectrum(&dirac_assemble(&m).unwrap()).unwrap());
    });
}

criterion_group!(
    benches,
    bench_build,
    bench_hodge,
    bench_harmonic_basis,
    bench_quasilinear,
    bench_spectra
);
criterion_main!(benches);
