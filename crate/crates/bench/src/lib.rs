//! Shared fixtures for the criterion benchmarks.

use rand::Rng;
use sdpso_core::objectives::{Benchmark, BenchmarkKind};
use sdpso_core::pso::init_swarm;
use sdpso_core::surrogate::{FitnessSource, Sample, TrainingDataset};
use sdpso_core::{seeded_stream, Bounds, RunConfig, Stream, SwarmParams, SwarmState};

pub struct SwarmFixture {
    pub params: SwarmParams,
    pub swarm: SwarmState,
    pub objective: Benchmark,
    pub rng: Stream,
}

/// An initialised Rastrigin swarm with the default hyperparameters.
pub fn swarm(dim: usize, pop: usize, s_prob: f64) -> SwarmFixture {
    let mut config = RunConfig::benchmark(BenchmarkKind::Rastrigin, dim, sdpso_core::Mode::Sdpso)
        .expect("valid benchmark config");
    config.pop_size = pop;
    config.s_prob = s_prob;
    let params = config.swarm_params();
    let mut objective = Benchmark::new(BenchmarkKind::Rastrigin, dim).expect("valid dimension");
    let mut rng = seeded_stream(42, 1);
    let (swarm, _) = init_swarm(0, &params, &mut objective, &mut rng).expect("init");
    SwarmFixture {
        params,
        swarm,
        objective,
        rng,
    }
}

/// `n` uniformly drawn Rastrigin samples in `[-5.12, 5.12]^dim`.
pub fn dataset(dim: usize, n: usize) -> TrainingDataset {
    let bounds = Bounds::uniform(dim, -5.12, 5.12).expect("valid bounds");
    let mut rng = seeded_stream(7, 0);
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.12..=5.12)).collect();
            Sample {
                fitness: BenchmarkKind::Rastrigin.eval(&x),
                position: x,
                source: FitnessSource::True,
                swarm_id: 0,
                generation: i,
            }
        })
        .collect();
    let mut data = TrainingDataset::new(bounds);
    data.append_samples(&samples).expect("samples match bounds");
    data
}
