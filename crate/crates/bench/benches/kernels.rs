use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use qfilter_core::noise::NoiseSpec;
use qfilter_core::operator::DensityOperator;
use qfilter_core::{
    apply_generator, build_oscillator, geometric_mean, jordan_solve, trajectory_stream, Coupling, Drift, FieldState, FilterMode, FilterRun,
    Grid, Operator, SignalModel, SystemModel, C64,
};

fn oscillator_model(dim: usize, points: usize) -> SystemModel {
    let hbar = 2.0;
    let osc = build_oscillator(dim, hbar, 1.0).unwrap();
    let signal = SignalModel::new(Grid::new(-4.0, 4.0, points).unwrap(), Drift::Linear(1.0), 1.0, Coupling::Identity)
        .unwrap();
    let l = vec![osc.q.scale_real(0.5)];
    SystemModel::new(hbar, osc.h.clone(), osc.q.clone(), l, NoiseSpec::scalar(1.0).unwrap(), signal).unwrap()
}

fn ground_field(model: &SystemModel) -> FieldState {
    let mut psi = vec![C64::new(0.0, 0.0); model.dim()];
    psi[0] = C64::new(1.0, 0.0);
    let rho = DensityOperator::pure(&psi).unwrap().into_operator();
    FieldState::uniform(model.signal(), &rho).unwrap()
}

fn random_positive(m: usize, seed: u64) -> Operator {
    let mut rng = trajectory_stream(seed, 0);
    let b = Operator::from_fn(m, |_, _| C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
    let mut p = &b * &b.dagger();
    p.axpy_real(m as f64, &Operator::identity(m));
    p
}

fn generator(c: &mut Criterion) {
    let mut g = c.benchmark_group("apply_generator");
    for (dim, points) in [(8, 33), (16, 65), (24, 129)] {
        let model = oscillator_model(dim, points);
        let field = ground_field(&model);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{dim}x{points}")), &field, |b, f| {
            b.iter(|| apply_generator(&model, black_box(f)).unwrap())
        });
    }
    g.finish();
}

fn normalized_step(c: &mut Criterion) {
    let model = oscillator_model(16, 65);
    let init = ground_field(&model);
    c.bench_function("step_normalized/16x65", |b| {
        b.iter_batched(
            || FilterRun::new(&model, FilterMode::Normalized, 1e-3, 1.0, init.clone()).unwrap(),
            |mut run| {
                run.step_normalized(black_box(&[1e-3])).unwrap();
                run
            },
            criterion::BatchSize::LargeInput,
        )
    });
}

fn jordan(c: &mut Criterion) {
    let mut g = c.benchmark_group("jordan_solve");
    for m in [4, 16, 32] {
        let p = random_positive(m, 1);
        let rhs = random_positive(m, 2);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| jordan_solve(black_box(&p), black_box(&rhs)).unwrap())
        });
    }
    g.finish();
}

fn geomean(c: &mut Criterion) {
    let mut g = c.benchmark_group("geometric_mean");
    for m in [2, 4, 8] {
        let kappa = random_positive(m, 3);
        g.bench_with_input(BenchmarkId::from_parameter(m), &kappa, |b, k| {
            b.iter(|| geometric_mean(black_box(k)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, generator, normalized_step, jordan, geomean);
criterion_main!(benches);
