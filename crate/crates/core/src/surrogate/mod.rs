//! Neural-network surrogate of the true fitness function.
//!
//! The manager accumulates every truly evaluated `(position, fitness)` pair
//! reported by the swarms into a [`TrainingDataset`], retrains a small
//! feed-forward regressor at each surrogate interval, and hands the
//! resulting immutable [`SurrogateSnapshot`] back to the workers, which use
//! it to estimate pseudo-fitness.

mod network;
mod snapshot;
mod train;

pub use network::{Layer, Mlp};
pub use snapshot::SurrogateSnapshot;
pub use train::{train, train_with_history, TrainingConfig};

use crate::domain::Bounds;
use crate::error::{Error, Result};

/// Where a fitness value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitnessSource {
    True,
    Surrogate,
}

/// A fitness observation reported by a swarm.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: Vec<f64>,
    pub fitness: f64,
    pub source: FitnessSource,
    pub swarm_id: usize,
    pub generation: usize,
}

/// Cumulative training set of true-fitness samples from all swarms.
#[derive(Debug, Clone)]
pub struct TrainingDataset {
    bounds: Bounds,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    provenance: Vec<(usize, usize)>,
    cap: Option<usize>,
}

impl TrainingDataset {
    pub fn new(bounds: Bounds) -> Self {
        Self {
            bounds,
            inputs: Vec::new(),
            targets: Vec::new(),
            provenance: Vec::new(),
            cap: None,
        }
    }

    /// Keeps at most `cap` samples, evicting the oldest first.
    pub fn with_cap(mut self, cap: Option<usize>) -> Self {
        self.cap = cap;
        self
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `(swarm_id, generation)` of each sample.
    pub fn provenance(&self) -> &[(usize, usize)] {
        &self.provenance
    }

    /// Appends a batch of samples. The batch is rejected as a whole if any
    /// sample is not a finite true evaluation inside the bounds.
    pub fn append_samples<'a, I>(&mut self, samples: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let batch: Vec<&Sample> = samples.into_iter().collect();
        for s in &batch {
            if s.source != FitnessSource::True {
                return Err(Error::Data(format!(
                    "sample from swarm {} generation {} carries pseudo-fitness",
                    s.swarm_id, s.generation
                )));
            }
            if !self.bounds.contains(&s.position) {
                return Err(Error::Data(format!(
                    "sample from swarm {} generation {} lies outside the bounds",
                    s.swarm_id, s.generation
                )));
            }
            if !s.fitness.is_finite() {
                return Err(Error::Data(format!(
                    "sample from swarm {} generation {} has non-finite fitness",
                    s.swarm_id, s.generation
                )));
            }
        }
        for s in batch {
            self.inputs.push(s.position.clone());
            self.targets.push(s.fitness);
            self.provenance.push((s.swarm_id, s.generation));
        }
        if let Some(cap) = self.cap {
            if self.len() > cap {
                let excess = self.len() - cap;
                self.inputs.drain(..excess);
                self.targets.drain(..excess);
                self.provenance.drain(..excess);
            }
        }
        Ok(())
    }
}

/// Root-mean-square difference over `(true, pseudo)` pairs; `None` when empty.
pub fn prediction_rmse(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sse: f64 = pairs.iter().map(|(t, p)| (t - p).powi(2)).sum();
    Some((sse / pairs.len() as f64).sqrt())
}
