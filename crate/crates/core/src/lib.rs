//! Surrogate-assisted distributed particle swarm optimisation.
//!
//! Several swarms evolve in parallel worker threads and periodically swap
//! their best particles along a ring. A small neural network, retrained in
//! the manager on every true evaluation the swarms report, stands in for
//! the expensive objective with a configurable probability. Any estimate
//! that would improve a personal best is re-checked against the true
//! objective, so personal and global bests are always true fitness values.
//!
//! ```
//! use sdpso_core::{run_config, BenchmarkKind, Mode, RunConfig};
//!
//! let mut config = RunConfig::benchmark(BenchmarkKind::Spherical, 5, Mode::Sdpso).unwrap();
//! config.t_max = 400;
//! let result = run_config(&config).unwrap();
//! assert!(result.best_fitness < 10.0);
//! ```
//!
//! Expensive external simulators are driven through [`extmodel`], which
//! speaks line-delimited JSON with a child process.

pub mod config;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod extmodel;
pub mod objectives;
pub mod orchestrator;
pub mod pso;
pub mod report;
pub mod surrogate;

pub use config::{ConfigFile, Mode, Problem, RunConfig};
pub use domain::{clamp_to_bounds, seeded_stream, Bounds, Particle, Stream, SwarmState};
pub use error::{Error, Result};
pub use experiment::{run_experiment, sweep_sprob, ExperimentOptions, ExperimentReport};
pub use extmodel::{EndpointError, EndpointSpec, ModelEndpoint, RemoteObjective};
pub use objectives::{Benchmark, BenchmarkKind, Objective};
pub use orchestrator::{run, run_config, run_with, RunLog, RunResult};
pub use pso::{BlendWeights, SwarmParams, VerificationPair};
pub use report::ExperimentSummary;
pub use surrogate::{SurrogateSnapshot, TrainingConfig, TrainingDataset};
