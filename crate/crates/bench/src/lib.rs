//! Benchmarks for the verification pipeline: scenario runs, adjoint
//! construction, the Picard solver and needle-set construction.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use horizon_pmp::adjoint::adjoint_free_endpoint;
use horizon_pmp::linear_ode::{picard_solve, LinearSystem, PicardOptions, Tau};
use horizon_pmp::needle::{build_variation_sets, q_ratio, IntervalUnion, StepFunction};
use horizon_pmp::scenarios::{build_scenario, run, Scenario, ScenarioConfig};
use horizon_pmp::{make_grid, ConvergentFunction, Matrix, TimeMap, Vector};

pub fn scenario(name: &str, n: usize) -> Scenario {
    let mut s = ScenarioConfig::embedded().settings(name).expect("built-in scenario");
    s.n = n;
    build_scenario(name, &s).expect("scenario builds")
}

fn scenario_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    for name in ["lq_regulator", "ramsey_budget", "resource_c"] {
        let sc = scenario(name, 256);
        g.bench_with_input(BenchmarkId::new("necessary", name), &sc, |b, sc| b.iter(|| run(black_box(sc), false).unwrap()));
    }
    let sc = scenario("lq_regulator", 256);
    g.bench_function("lq_regulator/sufficiency", |b| b.iter(|| run(black_box(&sc), true).unwrap()));
    g.finish();
}

fn adjoint_by_grid_size(c: &mut Criterion) {
    let mut g = c.benchmark_group("adjoint_free_endpoint");
    g.sample_size(10);
    for n in [64, 256, 1024] {
        let sc = scenario("lq_regulator", n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &sc, |b, sc| {
            b.iter(|| adjoint_free_endpoint(&sc.problem, &sc.process, &sc.grid).unwrap())
        });
    }
    g.finish();
}

fn picard(c: &mut Criterion) {
    let grid = make_grid(TimeMap::Log, 128).unwrap();
    let sys = LinearSystem::new(
        2,
        |t| Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]) * (-t).exp(),
        |t| Vector::from_vec(vec![(-2.0 * t).exp(), 0.0]),
    );
    let z = ConvergentFunction::constant(&grid, Vector::from_vec(vec![1.0, 0.0]));
    c.bench_function("picard_solve/rotation", |b| {
        b.iter(|| picard_solve(&sys, black_box(&z), Tau::At(0.0), &grid, PicardOptions::default()).unwrap())
    });
}

fn needle_sets(c: &mut Criterion) {
    let k = IntervalUnion::new(vec![(q_ratio(0, 1), q_ratio(2, 1)), (q_ratio(3, 1), q_ratio(4, 1))]).unwrap();
    let breaks: Vec<_> = (0..=8).map(|i| q_ratio(i, 2)).collect();
    let values = (0..8).map(|i| Vector::from_vec(vec![(i as f64).sin(), (i as f64).cos()])).collect();
    let y = StepFunction::new(breaks, values).unwrap();
    let mut g = c.benchmark_group("build_variation_sets");
    for delta in [0.2, 0.05] {
        g.bench_with_input(BenchmarkId::from_parameter(delta), &delta, |b, &d| {
            b.iter(|| build_variation_sets(&k, &y, d, 2, &[0.1, 0.25, 0.5]).unwrap())
        });
    }
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    scenario_runs(c);
    adjoint_by_grid_size(c);
    picard(c);
    needle_sets(c);
}
