//! Value types shared by every part of the engine: box bounds, particles,
//! swarm state and the deterministic random streams.
//!
//! Minimisation is assumed everywhere: a smaller fitness is better.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream type used throughout the engine.
pub type Stream = ChaCha8Rng;

/// Number of past fitness values a particle remembers.
pub const HISTORY_LEN: usize = 3;

/// Returns the deterministic stream identified by `(seed, stream_id)`.
///
/// Identical pairs give identical sequences; distinct stream ids select
/// independent ChaCha streams under the same key.
pub fn seeded_stream(seed: u64, stream_id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Per-dimension box constraints `lo[d] < hi[d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::config("bounds", "dimension must be at least 1"));
        }
        if lo.len() != hi.len() {
            return Err(Error::config(
                "bounds",
                format!("lo has {} entries but hi has {}", lo.len(), hi.len()),
            ));
        }
        for (d, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::config(
                    "bounds",
                    format!("dimension {d}: need finite lo < hi, got [{l}, {h}]"),
                ));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The same interval `[lo, hi]` in every one of `dim` dimensions.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::config(
                "dimension",
                format!("vector has {len} components, bounds have {}", self.dim()),
            ))
        }
    }
}

/// Clamps each component of `position` into its interval.
pub fn clamp_to_bounds(position: &[f64], bounds: &Bounds) -> Result<Vec<f64>> {
    bounds.check_dim(position.len())?;
    let mut out = position.to_vec();
    clamp_in_place(&mut out, bounds);
    Ok(out)
}

pub(crate) fn clamp_in_place(position: &mut [f64], bounds: &Bounds) {
    for ((x, l), h) in position.iter_mut().zip(bounds.lo()).zip(bounds.hi()) {
        *x = x.clamp(*l, *h);
    }
}

/// A candidate solution with its personal-best memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Fitness assigned at the current position; true or surrogate-blended.
    pub fitness: f64,
    pub fitness_is_true: bool,
    pub pbest_position: Vec<f64>,
    /// Always the result of a true evaluation.
    pub pbest_fitness: f64,
    history: VecDeque<f64>,
}

impl Particle {
    /// A freshly initialised particle whose position has been truly evaluated.
    pub fn new(position: Vec<f64>, velocity: Vec<f64>, true_fitness: f64) -> Self {
        let mut history = VecDeque::with_capacity(HISTORY_LEN);
        history.push_back(true_fitness);
        Self {
            pbest_position: position.clone(),
            position,
            velocity,
            fitness: true_fitness,
            fitness_is_true: true,
            pbest_fitness: true_fitness,
            history,
        }
    }

    /// Assigned fitness values of the most recent generations, oldest first.
    pub fn history(&self) -> &VecDeque<f64> {
        &self.history
    }

    pub(crate) fn push_history(&mut self, fitness: f64) {
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(fitness);
    }
}

/// One swarm's population together with its global best and counters.
#[derive(Debug, Clone)]
pub struct SwarmState {
    pub swarm_id: usize,
    pub particles: Vec<Particle>,
    pub gbest_position: Vec<f64>,
    pub gbest_fitness: f64,
    /// Number of population-wide evaluation rounds so far; initialisation is round 1.
    pub generation: usize,
    /// Budget counter, advanced by `pop_size` per generation.
    pub evals: usize,
    /// Every call to the true objective, including verifications.
    pub true_eval_count: usize,
    /// Verification evaluations of surrogate-driven improvements.
    pub verification_eval_count: usize,
    pub surrogate_call_count: usize,
}

impl SwarmState {
    pub fn pop_size(&self) -> usize {
        self.particles.len()
    }

    /// Raises the global best to any particle's personal best that beats it.
    pub(crate) fn refresh_gbest(&mut self) {
        for p in &self.particles {
            if p.pbest_fitness < self.gbest_fitness {
                self.gbest_fitness = p.pbest_fitness;
                self.gbest_position = p.pbest_position.clone();
            }
        }
    }
}
