//! Benchmarks for the hot paths: one Gibbs sweep, Varimax, MPCA, and
//! effect evaluation. Run with `cargo bench -p matmed-bench`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};

use matmed::effects::{closed_form_effects, mc_effects, EffectParams};
use matmed::gibbs::{gibbs_sweep, SamplerConfig};
use matmed::linalg::standard_normal_matrix;
use matmed::model::{paper_truth_params, random_params, simulate_dataset};
use matmed::rotation::{varimax, VarimaxOptions};
use matmed::seed::substream;
use matmed::twostep::{fit_mpca, MpcaOptions};
use matmed::{LatentState, MatrixDataset, ModelParams, Scenario, Vector};

/// A simulated dataset with the parameters and latent state that generated
/// it.
pub struct Fixture {
    pub theta: ModelParams,
    pub state: LatentState,
    pub data: MatrixDataset,
}

pub fn scenario_fixture(scenario: Scenario, n: usize, seed: u64) -> Fixture {
    let mut rng = substream(seed, "bench", 0);
    let theta = paper_truth_params(scenario, &mut rng).expect("valid truth");
    let (data, state) = simulate_dataset(&theta, n, &mut rng).expect("simulated data");
    Fixture { theta, state, data }
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_sweep");
    for (scenario, n) in [(Scenario::Low, 100), (Scenario::Low, 300), (Scenario::High, 300)] {
        let f = scenario_fixture(scenario, n, 1);
        let config = SamplerConfig::default();
        let mut rng = substream(2, "sweep", 0);
        let (mut theta, mut state) = (f.theta.clone(), f.state.clone());
        group.bench_function(BenchmarkId::new(scenario.name(), n), |b| {
            b.iter(|| gibbs_sweep(&mut theta, &mut state, &f.data, &config, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn bench_varimax(c: &mut Criterion) {
    let mut group = c.benchmark_group("varimax");
    let mut rng = substream(3, "varimax", 0);
    for (p, k) in [(10, 2), (50, 2), (50, 5)] {
        let loadings = standard_normal_matrix(p, k, &mut rng);
        group.bench_function(BenchmarkId::from_parameter(format!("{p}x{k}")), |b| {
            b.iter(|| varimax(black_box(&loadings), VarimaxOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_mpca(c: &mut Criterion) {
    let mut group = c.benchmark_group("mpca");
    group.sample_size(20);
    for scenario in [Scenario::Low, Scenario::High] {
        let f = scenario_fixture(scenario, 300, 4);
        group.bench_function(scenario.name(), |b| {
            b.iter(|| fit_mpca(black_box(&f.data), 2, 2, MpcaOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_effects(c: &mut Criterion) {
    let mut rng = substream(5, "effects", 0);
    let theta = random_params(10, 10, 3, 3, 2, &mut rng);
    let params = EffectParams::from_params(&theta, &Vector::zeros(2)).unwrap();
    c.bench_function("effects/closed_form_d9", |b| b.iter(|| closed_form_effects(black_box(&params))));
    c.bench_function("effects/monte_carlo_d9_s5000", |b| {
        b.iter(|| mc_effects(black_box(&params), 5000, &mut rng).unwrap())
    });
}

pub fn benchmarks(c: &mut Criterion) {
    bench_sweep(c);
    bench_varimax(c);
    bench_mpca(c);
    bench_effects(c);
}
