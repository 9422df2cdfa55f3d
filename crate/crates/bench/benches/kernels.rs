use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use narrowtube_core::diffusion::{build_ctmc, exit_stats_linear_solve, scale_uniform_grid};
use narrowtube_core::oracles::{fd_strip_exit_time, ks_statistic, FdOptions};
use narrowtube_core::reflected::TubeStepper;
use narrowtube_core::scale_speed::uniform_grid;
use narrowtube_core::{
    limiting_scale_speed, path_rng, BaseProfile, BumpShape, CrossSectionFamily, ExampleFamilySpec, ReflectedPathState,
    StepShape, WallSplit,
};
use rand::Rng;

fn sticky_spec() -> ExampleFamilySpec {
    ExampleFamilySpec::new(BaseProfile::Const(1.0), 0.0, 0.5, 0.3)
        .with_delta_scale(0.05)
        .with_shapes(StepShape::Poly, BumpShape::Cosine)
        .with_split(WallSplit::SYMMETRIC)
}

fn tube_steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("tube_step");
    for (name, family) in [
        ("flat", CrossSectionFamily::flat(1.0, 0.02).unwrap()),
        ("sticky", CrossSectionFamily::build(sticky_spec(), 0.01).unwrap()),
    ] {
        let stepper = TubeStepper::new(&family, 1e-6).unwrap();
        g.bench_function(name, |b| {
            let mut rng = path_rng(1, 0);
            let mut s = ReflectedPathState::new(0.0, family.midline(0.0));
            b.iter(|| {
                for _ in 0..1000 {
                    stepper.advance(&mut s, &mut rng).unwrap();
                    if s.x.abs() > 0.5 {
                        s = ReflectedPathState::new(0.0, family.midline(0.0));
                    }
                }
                black_box(s.x)
            })
        });
    }
    g.finish();
}

fn ctmc(c: &mut Criterion) {
    let spec = sticky_spec();
    let table = limiting_scale_speed(&spec, &uniform_grid(-1.0, 1.0, 201)).unwrap();
    let grid = scale_uniform_grid(&table.model, -0.1, 0.1, 4001).unwrap();
    c.bench_function("ctmc_build_4001", |b| b.iter(|| build_ctmc(black_box(&table), &grid).unwrap()));
    let model = build_ctmc(&table, &grid).unwrap();
    c.bench_function("ctmc_linear_solve_4001", |b| {
        b.iter(|| exit_stats_linear_solve(black_box(&model), (-0.1, 0.1)).unwrap())
    });
}

fn ks(c: &mut Criterion) {
    let mut rng = path_rng(2, 0);
    let a: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(2)).collect();
    c.bench_function("ks_two_sample_5000", |bch| bch.iter(|| ks_statistic(black_box(&a), black_box(&b)).unwrap()));
}

fn fd(c: &mut Criterion) {
    let family = CrossSectionFamily::flat(1.0, 0.02).unwrap();
    let mut g = c.benchmark_group("fd_strip");
    g.sample_size(10);
    g.bench_function("flat_257x33", |b| b.iter(|| fd_strip_exit_time(&family, 0.1, 257, 33, FdOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, tube_steps, ctmc, ks, fd);
criterion_main!(benches);
