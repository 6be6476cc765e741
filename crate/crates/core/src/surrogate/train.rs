use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::Stream;
use crate::error::{Error, Result};

use super::network::Mlp;
use super::snapshot::SurrogateSnapshot;
use super::TrainingDataset;

/// Mini-batch Adam settings for one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Oldest samples are evicted beyond this many; `None` keeps everything.
    pub sample_cap: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            sample_cap: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be finite and positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", "must be finite and positive");
        }
        if self.sample_cap == Some(0) {
            return bad("sample_cap", "must be at least 1 when set");
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grad: &Mlp, cfg: &TrainingConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grad.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a new snapshot on the whole dataset. See [`train_with_history`].
pub fn train(
    dataset: &TrainingDataset,
    previous: Option<&SurrogateSnapshot>,
    hidden: [usize; 2],
    config: &TrainingConfig,
    rng: &mut Stream,
) -> Result<SurrogateSnapshot> {
    train_with_history(dataset, previous, hidden, config, rng).map(|(s, _)| s)
}

/// Trains on mean squared error in normalised space and also returns the
/// full-dataset loss measured after each epoch.
///
/// Inputs are scaled by the problem bounds and targets by the current
/// dataset extremes. When `previous` has the same architecture its weights
/// are the starting point; otherwise weights are freshly initialised.
/// The returned snapshot's version is one past `previous`'s.
pub fn train_with_history(
    dataset: &TrainingDataset,
    previous: Option<&SurrogateSnapshot>,
    hidden: [usize; 2],
    config: &TrainingConfig,
    rng: &mut Stream,
) -> Result<(SurrogateSnapshot, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Precondition("training dataset is empty".into()));
    }
    let bounds = dataset.bounds();
    let dim = bounds.dim();
    let network = match previous {
        Some(prev) if prev.layer_sizes() == [dim, hidden[0], hidden[1], 1] => prev.network.clone(),
        _ => Mlp::new(dim, hidden, rng),
    };
    let mut snap = SurrogateSnapshot::from_network(network, bounds);
    snap.version = previous.map_or(0, |p| p.version) + 1;
    snap.sample_count = dataset.len();

    let (min, max) = dataset
        .targets()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    snap.set_target_range(min, max);

    let inputs: Vec<Vec<f64>> = dataset
        .inputs()
        .iter()
        .map(|x| snap.normalize_input(x))
        .collect();
    let targets: Vec<f64> = dataset
        .targets()
        .iter()
        .map(|&f| snap.normalize_target(f))
        .collect();

    let mut adam = Adam::new(snap.network.param_count());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = snap.network.zeroed_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                snap.network
                    .accumulate_gradient(&inputs[i], targets[i], scale, &mut grad);
            }
            adam.step(&mut snap.network, &grad, config);
        }
        let loss = inputs
            .iter()
            .zip(&targets)
            .map(|(x, t)| (snap.network.forward(x) - t).powi(2))
            .sum::<f64>()
            / inputs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Train(format!(
                "non-finite loss at epoch {epoch} with {} samples",
                inputs.len()
            )));
        }
        history.push(loss);
    }

    let sse: f64 = dataset
        .inputs()
        .iter()
        .zip(dataset.targets())
        .map(|(x, &f)| {
            let y = snap.denormalize_target(snap.network.forward(&snap.normalize_input(x)));
            (y - f).powi(2)
        })
        .sum();
    snap.train_rmse = (sse / dataset.len() as f64).sqrt();
    if !snap.train_rmse.is_finite() {
        return Err(Error::Train("non-finite training RMSE".into()));
    }
    Ok((snap, history))
}
