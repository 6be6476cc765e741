//! Single-swarm engine: initialisation, canonical velocity/position updates,
//! the surrogate-or-true fitness decision, pseudo-fitness blending and the
//! verified personal/global best updates.
//!
//! Random draws are consumed in a fixed order so that a swarm's trajectory
//! depends only on its own stream: at initialisation, per particle, `D`
//! position draws then `D` velocity draws; per generation, per particle,
//! `(γ1, γ2)` for each dimension followed by one κ draw when the surrogate
//! is available and `s_prob > 0`.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{clamp_in_place, Bounds, Particle, Stream, SwarmState};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::surrogate::{FitnessSource, Sample, SurrogateSnapshot};

/// Weights of the surrogate prediction and the recent-history mean in the
/// blended pseudo-fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub pseudo: f64,
    pub past: f64,
}

impl Default for BlendWeights {
    fn default() -> Self {
        Self {
            pseudo: 0.5,
            past: 0.5,
        }
    }
}

/// Everything a swarm needs to evolve, resolved from the run configuration.
#[derive(Debug, Clone)]
pub struct SwarmParams {
    pub bounds: Bounds,
    pub pop_size: usize,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    /// Per-dimension velocity limit.
    pub v_max: Vec<f64>,
    pub s_prob: f64,
    pub blend: BlendWeights,
}

impl SwarmParams {
    /// `v_max[d] = vmax_fraction * (hi[d] - lo[d])`.
    pub fn velocity_limit(bounds: &Bounds, vmax_fraction: f64) -> Vec<f64> {
        (0..bounds.dim())
            .map(|d| vmax_fraction * bounds.width(d))
            .collect()
    }
}

/// A surrogate estimate that beat a personal best and was re-checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationPair {
    pub swarm_id: usize,
    pub generation: usize,
    /// The blended fitness that triggered the check.
    pub pseudo_fitness: f64,
    pub true_fitness: f64,
}

/// What one generation (or initialisation) produced.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    pub generation: usize,
    /// True evaluations made on the regular path, for the training set.
    pub new_samples: Vec<Sample>,
    pub surrogate_calls: usize,
    pub verification_pairs: Vec<VerificationPair>,
}

impl StepOutcome {
    /// Calls to the true objective this generation.
    pub fn true_evaluations(&self) -> usize {
        self.new_samples.len() + self.verification_pairs.len()
    }
}

/// Creates a swarm with uniformly random positions and velocities and
/// truly evaluates every particle. Counts as generation 1.
pub fn init_swarm(
    swarm_id: usize,
    params: &SwarmParams,
    objective: &mut dyn Objective,
    rng: &mut Stream,
) -> Result<(SwarmState, StepOutcome)> {
    let bounds = &params.bounds;
    if objective.dim() != bounds.dim() {
        return Err(Error::config(
            "dim",
            format!(
                "objective `{}` has dimension {}, configuration has {}",
                objective.name(),
                objective.dim(),
                bounds.dim()
            ),
        ));
    }
    let generation = 1;
    let mut particles = Vec::with_capacity(params.pop_size);
    let mut samples = Vec::with_capacity(params.pop_size);
    for _ in 0..params.pop_size {
        let position: Vec<f64> = (0..bounds.dim())
            .map(|d| rng.gen_range(bounds.lo()[d]..=bounds.hi()[d]))
            .collect();
        let velocity: Vec<f64> = params
            .v_max
            .iter()
            .map(|&vm| rng.gen_range(-vm..=vm))
            .collect();
        let fitness = objective.evaluate(&position)?;
        samples.push(Sample {
            position: position.clone(),
            fitness,
            source: FitnessSource::True,
            swarm_id,
            generation,
        });
        particles.push(Particle::new(position, velocity, fitness));
    }
    let best = particles
        .iter()
        .min_by(|a, b| a.pbest_fitness.total_cmp(&b.pbest_fitness))
        .expect("pop_size >= 1");
    let state = SwarmState {
        swarm_id,
        gbest_position: best.pbest_position.clone(),
        gbest_fitness: best.pbest_fitness,
        particles,
        generation,
        evals: params.pop_size,
        true_eval_count: params.pop_size,
        verification_eval_count: 0,
        surrogate_call_count: 0,
    };
    let outcome = StepOutcome {
        generation,
        new_samples: samples,
        ..StepOutcome::default()
    };
    Ok((state, outcome))
}

/// Velocity update with the uniform factors supplied by `draw`, which is
/// called for γ1 then γ2 in each dimension. The result is clamped to
/// `[-v_max, v_max]`.
pub fn velocity_from_draws(
    particle: &Particle,
    gbest_position: &[f64],
    alpha: f64,
    c1: f64,
    c2: f64,
    v_max: &[f64],
    mut draw: impl FnMut() -> f64,
) -> Vec<f64> {
    (0..particle.position.len())
        .map(|d| {
            let x = particle.position[d];
            let g1 = draw();
            let g2 = draw();
            let v = alpha * particle.velocity[d]
                + c1 * g1 * (particle.pbest_position[d] - x)
                + c2 * g2 * (gbest_position[d] - x);
            v.clamp(-v_max[d], v_max[d])
        })
        .collect()
}

pub fn velocity_update(
    particle: &Particle,
    gbest_position: &[f64],
    params: &SwarmParams,
    rng: &mut Stream,
) -> Vec<f64> {
    velocity_from_draws(
        particle,
        gbest_position,
        params.alpha,
        params.c1,
        params.c2,
        &params.v_max,
        || rng.gen::<f64>(),
    )
}

/// `x + v`, clamped into the bounds. The velocity itself is left as is.
pub fn position_update(position: &[f64], velocity: &[f64], bounds: &Bounds) -> Vec<f64> {
    let mut x: Vec<f64> = position.iter().zip(velocity).map(|(x, v)| x + v).collect();
    clamp_in_place(&mut x, bounds);
    x
}

/// Chooses the surrogate with probability `s_prob` once a trained model is
/// available; otherwise the true objective. No draw is consumed when the
/// surrogate cannot be chosen.
pub fn decide_fitness_source(rng: &mut Stream, s_prob: f64, surrogate_ready: bool) -> FitnessSource {
    if !surrogate_ready || s_prob <= 0.0 {
        return FitnessSource::True;
    }
    let kappa: f64 = rng.gen();
    if kappa < s_prob {
        FitnessSource::Surrogate
    } else {
        FitnessSource::True
    }
}

/// `w.pseudo * pseudo + w.past * mean(history)`.
///
/// # Panics
///
/// If `history` does not hold exactly three values; the configuration
/// guarantees this before any surrogate is trained.
pub fn blend_pseudo_fitness(pseudo: f64, history: &[f64], weights: BlendWeights) -> f64 {
    assert_eq!(
        history.len(),
        crate::domain::HISTORY_LEN,
        "pseudo-fitness blending needs a full fitness history"
    );
    let past = history.iter().sum::<f64>() / history.len() as f64;
    weights.pseudo * pseudo + weights.past * past
}

/// Applies `candidate` (the fitness just assigned to particle `index`) to
/// the personal and global bests.
///
/// A surrogate-derived improvement is never trusted directly: the position
/// is truly evaluated and only the true value may replace a best. The
/// re-check is returned as a verification pair.
pub fn update_bests(
    swarm: &mut SwarmState,
    index: usize,
    candidate: f64,
    fitness_is_true: bool,
    objective: &mut dyn Objective,
) -> Result<Option<VerificationPair>> {
    let particle = &swarm.particles[index];
    if candidate.partial_cmp(&particle.pbest_fitness) != Some(Ordering::Less) {
        return Ok(None);
    }
    let (accepted, pair) = if fitness_is_true {
        (Some(candidate), None)
    } else {
        let true_fitness = objective.evaluate(&particle.position)?;
        swarm.true_eval_count += 1;
        swarm.verification_eval_count += 1;
        let pair = VerificationPair {
            swarm_id: swarm.swarm_id,
            generation: swarm.generation,
            pseudo_fitness: candidate,
            true_fitness,
        };
        let accepted = (true_fitness < particle.pbest_fitness).then_some(true_fitness);
        (accepted, Some(pair))
    };
    if let Some(value) = accepted {
        let particle = &mut swarm.particles[index];
        particle.pbest_fitness = value;
        particle.pbest_position = particle.position.clone();
        if value < swarm.gbest_fitness {
            swarm.gbest_fitness = value;
            swarm.gbest_position = particle.position.clone();
        }
    }
    Ok(pair)
}

/// Advances the swarm by one generation.
///
/// `snapshot` is the most recent trained surrogate, if any. The global best
/// is updated as soon as any particle improves it, so later particles in
/// the same generation already see the new best.
pub fn step_generation(
    swarm: &mut SwarmState,
    objective: &mut dyn Objective,
    snapshot: Option<&SurrogateSnapshot>,
    params: &SwarmParams,
    rng: &mut Stream,
) -> Result<StepOutcome> {
    let generation = swarm.generation + 1;
    swarm.generation = generation;
    let surrogate = snapshot.filter(|s| s.version > 0);
    let mut outcome = StepOutcome {
        generation,
        ..StepOutcome::default()
    };

    for i in 0..swarm.particles.len() {
        let velocity = velocity_update(&swarm.particles[i], &swarm.gbest_position, params, rng);
        let position = position_update(&swarm.particles[i].position, &velocity, &params.bounds);

        let source = decide_fitness_source(rng, params.s_prob, surrogate.is_some());
        let (fitness, is_true) = match (source, surrogate) {
            (FitnessSource::Surrogate, Some(model)) => {
                let pseudo = model.predict_pseudo_fitness(&position)?;
                let history: Vec<f64> = swarm.particles[i].history().iter().copied().collect();
                outcome.surrogate_calls += 1;
                swarm.surrogate_call_count += 1;
                (blend_pseudo_fitness(pseudo, &history, params.blend), false)
            }
            _ => {
                let f = objective.evaluate(&position)?;
                swarm.true_eval_count += 1;
                outcome.new_samples.push(Sample {
                    position: position.clone(),
                    fitness: f,
                    source: FitnessSource::True,
                    swarm_id: swarm.swarm_id,
                    generation,
                });
                (f, true)
            }
        };

        let particle = &mut swarm.particles[i];
        particle.velocity = velocity;
        particle.position = position;
        particle.fitness = fitness;
        particle.fitness_is_true = is_true;

        if let Some(pair) = update_bests(swarm, i, fitness, is_true, objective)? {
            outcome.verification_pairs.push(pair);
        }
        swarm.particles[i].push_history(fitness);
    }
    swarm.evals += swarm.particles.len();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_stream;
    use crate::objectives::{Benchmark, BenchmarkKind};
    use crate::surrogate::Mlp;

    fn params(kind: BenchmarkKind, dim: usize, pop: usize, s_prob: f64) -> SwarmParams {
        let bounds = kind.default_bounds(dim).unwrap();
        SwarmParams {
            v_max: SwarmParams::velocity_limit(&bounds, 0.25),
            bounds,
            pop_size: pop,
            alpha: 0.729,
            c1: 1.4,
            c2: 1.4,
            s_prob,
            blend: BlendWeights::default(),
        }
    }

    fn particle(x: f64, v: f64, pbest: f64) -> Particle {
        let mut p = Particle::new(vec![x], vec![v], 0.0);
        p.pbest_position = vec![pbest];
        p
    }

    /// Objective returning scripted values, for exercising the best updates.
    struct Scripted {
        bounds: Bounds,
        values: Vec<f64>,
        calls: usize,
    }

    impl Objective for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn bounds(&self) -> &Bounds {
            &self.bounds
        }
        fn evaluate(&mut self, _x: &[f64]) -> Result<f64> {
            let v = self.values[self.calls];
            self.calls += 1;
            Ok(v)
        }
    }

    fn scripted(values: Vec<f64>) -> Scripted {
        Scripted {
            bounds: Bounds::uniform(1, -10.0, 10.0).unwrap(),
            values,
            calls: 0,
        }
    }

    fn one_particle_swarm(pbest: f64) -> SwarmState {
        let mut p = Particle::new(vec![1.0], vec![0.0], pbest);
        p.position = vec![2.0];
        SwarmState {
            swarm_id: 0,
            gbest_position: vec![1.0],
            gbest_fitness: pbest,
            particles: vec![p],
            generation: 5,
            evals: 0,
            true_eval_count: 0,
            verification_eval_count: 0,
            surrogate_call_count: 0,
        }
    }

    #[test]
    fn init_swarm_populates_within_bounds() {
        let p = params(BenchmarkKind::Spherical, 30, 20, 0.0);
        let mut obj = Benchmark::new(BenchmarkKind::Spherical, 30).unwrap();
        let (swarm, outcome) = init_swarm(0, &p, &mut obj, &mut seeded_stream(1, 1)).unwrap();
        assert_eq!(swarm.particles.len(), 20);
        assert!(swarm.particles.iter().all(|q| p.bounds.contains(&q.position)));
        let min = swarm
            .particles
            .iter()
            .map(|q| q.fitness)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(swarm.gbest_fitness, min);
        assert!(swarm.particles.iter().all(|q| swarm.gbest_fitness <= q.fitness));
        assert_eq!(swarm.evals, 20);
        assert_eq!(outcome.new_samples.len(), 20);
    }

    #[test]
    fn init_swarm_is_reproducible() {
        let bounds = Bounds::uniform(1, -1.0, 1.0).unwrap();
        let p = SwarmParams {
            v_max: SwarmParams::velocity_limit(&bounds, 0.25),
            bounds,
            ..params(BenchmarkKind::Spherical, 1, 5, 0.0)
        };
        let mut obj = Benchmark::new(BenchmarkKind::Spherical, 1).unwrap();
        let (a, _) = init_swarm(0, &p, &mut obj, &mut seeded_stream(9, 1)).unwrap();
        let (b, _) = init_swarm(0, &p, &mut obj, &mut seeded_stream(9, 1)).unwrap();
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn init_swarm_rejects_dimension_mismatch() {
        let p = params(BenchmarkKind::Spherical, 3, 5, 0.0);
        let mut obj = Benchmark::new(BenchmarkKind::Spherical, 4).unwrap();
        assert!(init_swarm(0, &p, &mut obj, &mut seeded_stream(1, 1)).is_err());
    }

    #[test]
    fn velocity_pure_inertia() {
        let p = particle(0.3, 0.7, 2.0);
        let v = velocity_from_draws(&p, &[3.0], 1.0, 0.0, 0.0, &[10.0], || 0.9);
        assert_eq!(v, vec![0.7]);
    }

    #[test]
    fn velocity_without_attraction_scales_by_inertia() {
        let p = particle(1.5, 0.8, 1.5);
        let v = velocity_from_draws(&p, &[1.5], 0.729, 1.4, 1.4, &[10.0], || 0.3);
        assert_eq!(v, vec![0.729 * 0.8]);
    }

    #[test]
    fn velocity_with_pinned_draws() {
        let p = particle(0.0, 0.0, 1.0);
        let v = velocity_from_draws(&p, &[2.0], 0.729, 1.4, 1.4, &[10.0], || 0.5);
        assert!((v[0] - 2.1).abs() < 1e-12);
        let clamped = velocity_from_draws(&p, &[2.0], 0.729, 1.4, 1.4, &[1.0], || 0.5);
        assert_eq!(clamped, vec![1.0]);
    }

    #[test]
    fn position_update_examples() {
        let b = Bounds::uniform(1, -5.0, 5.0).unwrap();
        assert_eq!(position_update(&[0.0], &[2.1], &b), vec![2.1]);
        assert_eq!(position_update(&[4.9], &[2.1], &b), vec![5.0]);
        assert_eq!(position_update(&[1.25], &[0.0], &b), vec![1.25]);
    }

    #[test]
    fn fitness_source_guards() {
        let mut rng = seeded_stream(1, 0);
        assert!((0..1000).all(|_| decide_fitness_source(&mut rng, 0.0, true) == FitnessSource::True));
        assert!((0..1000).all(|_| decide_fitness_source(&mut rng, 1.0, false) == FitnessSource::True));
        assert!((0..1000).all(|_| decide_fitness_source(&mut rng, 1.0, true) == FitnessSource::Surrogate));
    }

    #[test]
    fn fitness_source_frequency_matches_probability() {
        let mut rng = seeded_stream(2, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| decide_fitness_source(&mut rng, 0.5, true) == FitnessSource::Surrogate)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn blend_examples() {
        let w = BlendWeights::default();
        assert_eq!(blend_pseudo_fitness(2.0, &[4.0, 6.0, 8.0], w), 4.0);
        assert_eq!(blend_pseudo_fitness(5.0, &[4.0, 5.0, 6.0], w), 5.0);
        assert_eq!(blend_pseudo_fitness(0.0, &[0.0, 0.0, 0.0], w), 0.0);
    }

    #[test]
    #[should_panic(expected = "full fitness history")]
    fn blend_requires_three_entries() {
        blend_pseudo_fitness(1.0, &[1.0, 2.0], BlendWeights::default());
    }

    #[test]
    fn true_improvement_updates_pbest() {
        let mut swarm = one_particle_swarm(7.0);
        let mut obj = scripted(vec![]);
        let pair = update_bests(&mut swarm, 0, 5.0, true, &mut obj).unwrap();
        assert!(pair.is_none());
        assert_eq!(swarm.particles[0].pbest_fitness, 5.0);
        assert_eq!(swarm.particles[0].pbest_position, vec![2.0]);
        assert_eq!(swarm.gbest_fitness, 5.0);
        assert_eq!(obj.calls, 0);
    }

    #[test]
    fn surrogate_improvement_is_verified() {
        let mut swarm = one_particle_swarm(7.0);
        let mut obj = scripted(vec![9.0]);
        let pair = update_bests(&mut swarm, 0, 5.0, false, &mut obj).unwrap().unwrap();
        assert_eq!((pair.pseudo_fitness, pair.true_fitness), (5.0, 9.0));
        assert_eq!(swarm.particles[0].pbest_fitness, 7.0);
        assert_eq!(swarm.gbest_fitness, 7.0);
        assert_eq!(swarm.verification_eval_count, 1);
        assert_eq!(swarm.true_eval_count, 1);

        let mut obj = scripted(vec![6.0]);
        update_bests(&mut swarm, 0, 5.0, false, &mut obj).unwrap();
        assert_eq!(swarm.particles[0].pbest_fitness, 6.0);
        assert_eq!(swarm.gbest_fitness, 6.0);
    }

    #[test]
    fn non_improving_candidate_is_ignored() {
        let mut swarm = one_particle_swarm(7.0);
        let mut obj = scripted(vec![]);
        assert!(update_bests(&mut swarm, 0, 8.0, false, &mut obj).unwrap().is_none());
        assert_eq!(obj.calls, 0);
        assert_eq!(swarm.particles[0].pbest_fitness, 7.0);
    }

    #[test]
    fn true_only_generations_record_every_sample() {
        let p = params(BenchmarkKind::Rastrigin, 4, 8, 0.0);
        let mut obj = Benchmark::new(BenchmarkKind::Rastrigin, 4).unwrap();
        let mut rng = seeded_stream(4, 1);
        let (mut swarm, _) = init_swarm(0, &p, &mut obj, &mut rng).unwrap();
        for g in 0..10 {
            let out = step_generation(&mut swarm, &mut obj, None, &p, &mut rng).unwrap();
            assert_eq!(out.new_samples.len(), 8);
            assert_eq!(out.surrogate_calls, 0);
            assert_eq!(out.generation, g + 2);
            for s in &out.new_samples {
                assert!((obj.evaluate(&s.position).unwrap() - s.fitness).abs() <= 1e-12);
            }
        }
        assert_eq!(swarm.evals, swarm.generation * 8);
    }

    #[test]
    fn true_only_runs_are_bitwise_reproducible() {
        let run = || {
            let p = params(BenchmarkKind::Ackley, 5, 10, 0.0);
            let mut obj = Benchmark::new(BenchmarkKind::Ackley, 5).unwrap();
            let mut rng = seeded_stream(77, 1);
            let (mut swarm, _) = init_swarm(0, &p, &mut obj, &mut rng).unwrap();
            (0..50)
                .map(|_| {
                    step_generation(&mut swarm, &mut obj, None, &p, &mut rng).unwrap();
                    swarm.gbest_fitness.to_bits()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn spherical_5d_converges_in_most_runs() {
        let p = params(BenchmarkKind::Spherical, 5, 10, 0.0);
        let mut obj = Benchmark::new(BenchmarkKind::Spherical, 5).unwrap();
        let mut good = 0;
        for seed in 0..30 {
            let mut rng = seeded_stream(seed, 1);
            let (mut swarm, _) = init_swarm(0, &p, &mut obj, &mut rng).unwrap();
            let mut last = swarm.gbest_fitness;
            for _ in 0..200 {
                step_generation(&mut swarm, &mut obj, None, &p, &mut rng).unwrap();
                assert!(swarm.gbest_fitness <= last);
                last = swarm.gbest_fitness;
            }
            if swarm.gbest_fitness < 0.1 {
                good += 1;
            }
        }
        assert!(good >= 28, "{good}/30 runs reached 0.1");
    }

    #[test]
    fn surrogate_path_keeps_bests_true() {
        let p = params(BenchmarkKind::Spherical, 3, 10, 0.9);
        let mut obj = Benchmark::new(BenchmarkKind::Spherical, 3).unwrap();
        let mut rng = seeded_stream(5, 1);
        // An untrained random network is a deliberately poor surrogate.
        let mut snap = crate::surrogate::SurrogateSnapshot::from_network(
            Mlp::new(3, [3, 2], &mut seeded_stream(5, 0)),
            &p.bounds,
        );
        snap.version = 1;
        snap.set_target_range(-50.0, 50.0);
        let (mut swarm, _) = init_swarm(0, &p, &mut obj, &mut rng).unwrap();
        for _ in 0..3 {
            step_generation(&mut swarm, &mut obj, None, &p, &mut rng).unwrap();
        }
        for _ in 0..30 {
            let before = swarm.true_eval_count;
            let out = step_generation(&mut swarm, &mut obj, Some(&snap), &p, &mut rng).unwrap();
            assert_eq!(
                swarm.true_eval_count - before,
                p.pop_size - out.surrogate_calls + out.verification_pairs.len()
            );
            for q in &swarm.particles {
                assert_eq!(obj.evaluate(&q.pbest_position).unwrap(), q.pbest_fitness);
            }
            assert_eq!(obj.evaluate(&swarm.gbest_position).unwrap(), swarm.gbest_fitness);
        }
        assert!(swarm.surrogate_call_count > 0);
    }
}
