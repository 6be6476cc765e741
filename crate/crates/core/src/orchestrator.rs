//! The manager of a distributed run.
//!
//! One worker thread per swarm owns that swarm's state, objective and random
//! stream. Workers share nothing; the manager drives them in blocks and
//! meets them at barriers, where it routes particle exchanges along a
//! unidirectional ring, gathers the true evaluations reported since the
//! last training round, retrains the surrogate and broadcasts the new
//! snapshot before any worker starts its next generation.
//!
//! Exchanges are attempted every `phi` generations and training happens
//! every `psi` generations, counting initialisation as generation 1. A run
//! ends once each swarm has spent `t_max` evaluations.

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::Rng;

use crate::config::RunConfig;
use crate::domain::{seeded_stream, Particle, Stream, SwarmState};
use crate::error::{Error, Result};
use crate::objectives::{Objective, ObjectiveFactory};
use crate::pso::{init_swarm, step_generation, StepOutcome, SwarmParams, VerificationPair};
use crate::surrogate::{self, Sample, SurrogateSnapshot, TrainingConfig, TrainingDataset};

/// Stream id of the manager; swarm `m` uses `m + 1`.
pub const MANAGER_STREAM: u64 = 0;

/// State of one swarm after one generation. Counters are cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub swarm: usize,
    pub generation: usize,
    pub gbest: f64,
    pub evals: usize,
    pub true_evals: usize,
    pub surrogate_calls: usize,
    pub tee_count: usize,
    /// Version of the surrogate the swarm used this generation (0 = none).
    pub surrogate_version: u64,
}

impl GenerationRecord {
    fn of(swarm: &SwarmState, surrogate_version: u64) -> Self {
        Self {
            swarm: swarm.swarm_id,
            generation: swarm.generation,
            gbest: swarm.gbest_fitness,
            evals: swarm.evals,
            true_evals: swarm.true_eval_count,
            surrogate_calls: swarm.surrogate_call_count,
            tee_count: swarm.verification_eval_count,
            surrogate_version,
        }
    }
}

/// One successful surrogate training round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRecord {
    /// Generation at whose barrier the round ran.
    pub generation: usize,
    pub version: u64,
    pub sample_count: usize,
    pub train_rmse: f64,
}

/// Receives log records as the run progresses, so that a failed run still
/// leaves everything up to the failure behind.
pub trait RunObserver {
    fn on_generation(&mut self, _record: &GenerationRecord) {}
    fn on_training(&mut self, _record: &TrainingRecord) {}
    fn on_verification(&mut self, _pair: &VerificationPair) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

/// Everything logged during a run, in barrier order.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub generations: Vec<GenerationRecord>,
    pub training: Vec<TrainingRecord>,
    pub verification: Vec<VerificationPair>,
    /// Barriers at which particles actually migrated.
    pub exchanges: usize,
    pub training_failures: usize,
}

impl RunObserver for RunLog {
    fn on_generation(&mut self, record: &GenerationRecord) {
        self.generations.push(record.clone());
    }
    fn on_training(&mut self, record: &TrainingRecord) {
        self.training.push(*record);
    }
    fn on_verification(&mut self, pair: &VerificationPair) {
        self.verification.push(*pair);
    }
}

/// Forwards to two observers.
struct Tee<'a>(&'a mut RunLog, &'a mut dyn RunObserver);

impl RunObserver for Tee<'_> {
    fn on_generation(&mut self, r: &GenerationRecord) {
        self.0.on_generation(r);
        self.1.on_generation(r);
    }
    fn on_training(&mut self, r: &TrainingRecord) {
        self.0.on_training(r);
        self.1.on_training(r);
    }
    fn on_verification(&mut self, p: &VerificationPair) {
        self.0.on_verification(p);
        self.1.on_verification(p);
    }
}

/// Produces a new surrogate from the cumulative dataset.
pub trait Trainer {
    fn train(
        &mut self,
        dataset: &TrainingDataset,
        previous: Option<&SurrogateSnapshot>,
        rng: &mut Stream,
    ) -> Result<SurrogateSnapshot>;
}

/// The standard trainer: the feed-forward regressor with Adam.
#[derive(Debug, Clone)]
pub struct MlpTrainer {
    pub hidden: [usize; 2],
    pub config: TrainingConfig,
}

impl MlpTrainer {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            hidden: config.hidden,
            config: config.training.clone(),
        }
    }
}

impl Trainer for MlpTrainer {
    fn train(
        &mut self,
        dataset: &TrainingDataset,
        previous: Option<&SurrogateSnapshot>,
        rng: &mut Stream,
    ) -> Result<SurrogateSnapshot> {
        surrogate::train(dataset, previous, self.hidden, &self.config, rng)
    }
}

/// Particles moving from one swarm to its ring successor.
#[derive(Debug, Clone)]
pub struct ExchangeMessage {
    pub from_swarm: usize,
    pub to_swarm: usize,
    /// Full particles, personal-best records and fitness history included.
    pub emigrants: Vec<Particle>,
}

/// `floor(fraction * pop_size)`.
pub fn emigrant_count(fraction: f64, pop_size: usize) -> usize {
    (fraction * pop_size as f64).floor() as usize
}

/// Indices of the particles ordered from best to worst personal best.
fn ranked(swarm: &SwarmState) -> Vec<usize> {
    let mut order: Vec<usize> = (0..swarm.particles.len()).collect();
    order.sort_by(|&a, &b| {
        swarm.particles[a]
            .pbest_fitness
            .total_cmp(&swarm.particles[b].pbest_fitness)
    });
    order
}

/// Copies of the `count` particles with the best personal bests.
pub fn select_emigrants(swarm: &SwarmState, count: usize) -> Vec<Particle> {
    ranked(swarm)
        .into_iter()
        .take(count)
        .map(|i| swarm.particles[i].clone())
        .collect()
}

/// Replaces the worst particles (by personal best) with `immigrants`; the
/// replaced particles are discarded. The global best is raised if an
/// immigrant carries a better personal best.
pub fn accept_immigrants(swarm: &mut SwarmState, immigrants: Vec<Particle>) {
    let order = ranked(swarm);
    let worst = order.iter().rev().take(immigrants.len());
    for (&slot, particle) in worst.zip(immigrants) {
        swarm.particles[slot] = particle;
    }
    swarm.refresh_gbest();
}

/// Draws `b ~ U[0,1)` and exchanges iff `b < beta`.
pub fn draw_exchange(rng: &mut Stream, beta: f64) -> bool {
    rng.gen::<f64>() < beta
}

/// Pairs each swarm's emigrants with its ring successor.
pub fn ring_messages(emigrants: Vec<Vec<Particle>>) -> Vec<ExchangeMessage> {
    let m = emigrants.len();
    emigrants
        .into_iter()
        .enumerate()
        .map(|(from, emigrants)| ExchangeMessage {
            from_swarm: from,
            to_swarm: (from + 1) % m,
            emigrants,
        })
        .collect()
}

/// One exchange attempt over in-memory swarms. Emigrants are taken from
/// every swarm before any swarm is modified. Returns whether particles
/// moved; a single swarm never exchanges.
pub fn attempt_exchange(
    swarms: &mut [SwarmState],
    exchange_fraction: f64,
    beta: f64,
    rng: &mut Stream,
) -> bool {
    if swarms.len() < 2 || !draw_exchange(rng, beta) {
        return false;
    }
    let emigrants = swarms
        .iter()
        .map(|s| select_emigrants(s, emigrant_count(exchange_fraction, s.pop_size())))
        .collect();
    for msg in ring_messages(emigrants) {
        accept_immigrants(&mut swarms[msg.to_swarm], msg.emigrants);
    }
    true
}

/// Appends the new samples and trains the next snapshot.
pub fn collect_and_train(
    dataset: &mut TrainingDataset,
    samples: &[Sample],
    previous: Option<&SurrogateSnapshot>,
    trainer: &mut dyn Trainer,
    rng: &mut Stream,
) -> Result<SurrogateSnapshot> {
    dataset.append_samples(samples)?;
    trainer.train(dataset, previous, rng)
}

/// The combined outcome of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub best_swarm: usize,
    /// Final state of every swarm, by swarm id.
    pub swarms: Vec<SwarmState>,
    pub elapsed: Duration,
    pub true_eval_count: usize,
    pub surrogate_call_count: usize,
    pub tee_count: usize,
    pub log: RunLog,
    pub final_snapshot: Option<SurrogateSnapshot>,
    /// True fitness values from the regular evaluation path during the
    /// last `psi` generations.
    pub final_block_true_fitness: Vec<f64>,
}

impl RunResult {
    /// gbest of `swarm` after each generation.
    pub fn trajectory(&self, swarm: usize) -> Vec<f64> {
        self.log
            .generations
            .iter()
            .filter(|r| r.swarm == swarm)
            .map(|r| r.gbest)
            .collect()
    }

    /// Root mean squared error of the verified pseudo-fitness values.
    pub fn prediction_rmse(&self) -> Option<f64> {
        let pairs: Vec<(f64, f64)> = self
            .log
            .verification
            .iter()
            .map(|p| (p.true_fitness, p.pseudo_fitness))
            .collect();
        surrogate::prediction_rmse(&pairs)
    }
}

/// Selects the best swarm and aggregates all counters.
///
/// # Panics
///
/// If `swarms` is empty.
pub fn finalize(
    swarms: Vec<SwarmState>,
    log: RunLog,
    elapsed: Duration,
    final_snapshot: Option<SurrogateSnapshot>,
    final_block_true_fitness: Vec<f64>,
) -> RunResult {
    let best = swarms
        .iter()
        .min_by(|a, b| a.gbest_fitness.total_cmp(&b.gbest_fitness))
        .expect("at least one swarm");
    RunResult {
        best_position: best.gbest_position.clone(),
        best_fitness: best.gbest_fitness,
        best_swarm: best.swarm_id,
        true_eval_count: swarms.iter().map(|s| s.true_eval_count).sum(),
        surrogate_call_count: swarms.iter().map(|s| s.surrogate_call_count).sum(),
        tee_count: swarms.iter().map(|s| s.verification_eval_count).sum(),
        swarms,
        elapsed,
        log,
        final_snapshot,
        final_block_true_fitness,
    }
}

enum Command {
    /// Step until the given generation, first switching to `snapshot` if given.
    Advance {
        until: usize,
        snapshot: Option<Arc<SurrogateSnapshot>>,
    },
    Emigrate(usize),
    Immigrate(Vec<Particle>),
    Finish,
}

enum Reply {
    Advanced {
        records: Vec<GenerationRecord>,
        outcomes: Vec<StepOutcome>,
    },
    Emigrants(Vec<Particle>),
    Immigrated,
    Finished(Box<SwarmState>),
}

struct Worker {
    id: usize,
    params: SwarmParams,
    objective: Box<dyn Objective>,
    rng: Stream,
    swarm: Option<SwarmState>,
    snapshot: Option<Arc<SurrogateSnapshot>>,
}

impl Worker {
    fn version(&self) -> u64 {
        self.snapshot.as_ref().map_or(0, |s| s.version)
    }

    fn handle(&mut self, command: Command) -> Result<Reply> {
        match command {
            Command::Advance { until, snapshot } => {
                if snapshot.is_some() {
                    self.snapshot = snapshot;
                }
                let mut records = Vec::new();
                let mut outcomes = Vec::new();
                if self.swarm.is_none() {
                    let (swarm, outcome) =
                        init_swarm(self.id, &self.params, self.objective.as_mut(), &mut self.rng)?;
                    records.push(GenerationRecord::of(&swarm, self.version()));
                    outcomes.push(outcome);
                    self.swarm = Some(swarm);
                }
                let version = self.version();
                let swarm = self.swarm.as_mut().expect("initialised above");
                while swarm.generation < until {
                    let outcome = step_generation(
                        swarm,
                        self.objective.as_mut(),
                        self.snapshot.as_deref(),
                        &self.params,
                        &mut self.rng,
                    )?;
                    records.push(GenerationRecord::of(swarm, version));
                    outcomes.push(outcome);
                }
                Ok(Reply::Advanced { records, outcomes })
            }
            Command::Emigrate(count) => Ok(Reply::Emigrants(select_emigrants(self.state()?, count))),
            Command::Immigrate(particles) => {
                let swarm = self
                    .swarm
                    .as_mut()
                    .ok_or_else(|| Error::Precondition("exchange before initialisation".into()))?;
                accept_immigrants(swarm, particles);
                Ok(Reply::Immigrated)
            }
            Command::Finish => {
                let swarm = self
                    .swarm
                    .take()
                    .ok_or_else(|| Error::Precondition("finish before initialisation".into()))?;
                Ok(Reply::Finished(Box::new(swarm)))
            }
        }
    }

    fn state(&self) -> Result<&SwarmState> {
        self.swarm
            .as_ref()
            .ok_or_else(|| Error::Precondition("exchange before initialisation".into()))
    }

    fn serve(mut self, commands: Receiver<Command>, replies: Sender<(usize, Result<Reply>)>) {
        for command in commands {
            let finishing = matches!(command, Command::Finish);
            let reply = panic::catch_unwind(AssertUnwindSafe(|| self.handle(command)))
                .unwrap_or_else(|payload| {
                    let msg = payload
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| payload.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into());
                    Err(Error::Eval(format!("worker panicked: {msg}")))
                });
            let failed = reply.is_err();
            if replies.send((self.id, reply)).is_err() || failed || finishing {
                break;
            }
        }
    }
}

/// Manager-side handles to the workers.
struct Pool {
    commands: Vec<Sender<Command>>,
    replies: Receiver<(usize, Result<Reply>)>,
}

impl Pool {
    /// Sends one command per worker and waits for every reply, returned in
    /// swarm order. A failing worker aborts the round.
    fn round(&self, commands: Vec<Command>) -> std::result::Result<Vec<Reply>, (Vec<Option<Reply>>, Error)> {
        let m = self.commands.len();
        for (tx, cmd) in self.commands.iter().zip(commands) {
            // A closed channel shows up as a missing reply below.
            let _ = tx.send(cmd);
        }
        let mut out: Vec<Option<Reply>> = (0..m).map(|_| None).collect();
        let mut failure = None;
        for _ in 0..m {
            match self.replies.recv() {
                Ok((id, Ok(reply))) => out[id] = Some(reply),
                Ok((id, Err(e))) => {
                    failure.get_or_insert(Error::Worker {
                        swarm: id,
                        source: Box::new(e),
                    });
                }
                Err(_) => {
                    failure.get_or_insert(Error::Precondition("worker channel closed".into()));
                    break;
                }
            }
        }
        match failure {
            None => Ok(out.into_iter().map(|r| r.expect("one reply per worker")).collect()),
            Some(e) => Err((out, e)),
        }
    }
}

/// Runs the configured optimisation with the standard trainer.
pub fn run(config: &RunConfig, factory: &ObjectiveFactory) -> Result<RunResult> {
    run_with(config, factory, &mut MlpTrainer::from_config(config), &mut NoObserver)
}

/// Runs with the configuration's own objectives.
pub fn run_config(config: &RunConfig) -> Result<RunResult> {
    run(config, &|m| config.build_objective(m))
}

/// Runs the full algorithm. `factory(m)` creates swarm `m`'s objective.
///
/// On a worker failure the run stops at the next barrier and the worker's
/// error is returned; `observer` has by then received every record logged
/// before the failure.
pub fn run_with(
    config: &RunConfig,
    factory: &ObjectiveFactory,
    trainer: &mut dyn Trainer,
    observer: &mut dyn RunObserver,
) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let m = config.swarms;
    let params = config.swarm_params();
    let mut objectives = Vec::with_capacity(m);
    for id in 0..m {
        let objective = factory(id).map_err(|e| Error::Worker {
            swarm: id,
            source: Box::new(e),
        })?;
        objectives.push(objective);
    }

    let total_generations = config.t_max.div_ceil(config.pop_size);
    let training = config.s_prob > 0.0;
    let exchanging = m > 1;
    let emigrants = config.emigrant_count();
    let final_block_start = total_generations.saturating_sub(config.psi);

    let mut log = RunLog::default();
    let mut manager_rng = seeded_stream(config.seed, MANAGER_STREAM);
    let mut dataset = TrainingDataset::new(config.bounds.clone()).with_cap(config.training.sample_cap);
    let mut pending: Vec<Sample> = Vec::new();
    let mut final_block = Vec::new();
    let mut snapshot: Option<Arc<SurrogateSnapshot>> = None;
    let mut fresh_snapshot: Option<Arc<SurrogateSnapshot>> = None;

    let is_barrier = |g: usize| {
        g == total_generations
            || (exchanging && g.is_multiple_of(config.phi))
            || (training && g.is_multiple_of(config.psi))
    };

    thread::scope(|scope| {
        let (reply_tx, reply_rx) = mpsc::channel();
        let mut commands = Vec::with_capacity(m);
        for (id, objective) in objectives.into_iter().enumerate() {
            let (tx, rx) = mpsc::channel();
            commands.push(tx);
            let worker = Worker {
                id,
                params: params.clone(),
                objective,
                rng: seeded_stream(config.seed, id as u64 + 1),
                swarm: None,
                snapshot: None,
            };
            let replies = reply_tx.clone();
            thread::Builder::new()
                .name(format!("swarm-{id}"))
                .spawn_scoped(scope, move || worker.serve(rx, replies))
                .map_err(Error::Io)?;
        }
        drop(reply_tx);
        let pool = Pool {
            commands,
            replies: reply_rx,
        };
        let mut sink = Tee(&mut log, observer);

        let mut generation = 0;
        while generation < total_generations {
            let until = (generation + 1..=total_generations)
                .find(|&g| is_barrier(g))
                .expect("the last generation is a barrier");
            let cmds = (0..m)
                .map(|_| Command::Advance {
                    until,
                    snapshot: fresh_snapshot.clone(),
                })
                .collect();
            fresh_snapshot = None;
            let (replies, failure) = match pool.round(cmds) {
                Ok(r) => (r.into_iter().map(Some).collect(), None),
                Err((partial, e)) => (partial, Some(e)),
            };

            let mut records = Vec::new();
            let mut pairs = Vec::new();
            for reply in replies.into_iter().flatten() {
                if let Reply::Advanced { records: r, outcomes } = reply {
                    records.extend(r);
                    for outcome in outcomes {
                        pairs.extend(outcome.verification_pairs);
                        if outcome.generation > final_block_start {
                            final_block.extend(outcome.new_samples.iter().map(|s| s.fitness));
                        }
                        if training {
                            pending.extend(outcome.new_samples);
                        }
                    }
                }
            }
            records.sort_by_key(|r| (r.generation, r.swarm));
            pairs.sort_by_key(|p| (p.generation, p.swarm_id));
            records.iter().for_each(|r| sink.on_generation(r));
            pairs.iter().for_each(|p| sink.on_verification(p));
            if let Some(e) = failure {
                return Err(e);
            }
            generation = until;
            if generation == total_generations {
                break;
            }

            if exchanging && generation.is_multiple_of(config.phi) && draw_exchange(&mut manager_rng, config.beta) {
                let replies = pool
                    .round((0..m).map(|_| Command::Emigrate(emigrants)).collect())
                    .map_err(|(_, e)| e)?;
                let outgoing = replies
                    .into_iter()
                    .map(|r| match r {
                        Reply::Emigrants(p) => p,
                        _ => unreachable!("emigrate answers with emigrants"),
                    })
                    .collect();
                let mut incoming: Vec<Vec<Particle>> = (0..m).map(|_| Vec::new()).collect();
                for msg in ring_messages(outgoing) {
                    incoming[msg.to_swarm] = msg.emigrants;
                }
                pool.round(incoming.into_iter().map(Command::Immigrate).collect())
                    .map_err(|(_, e)| e)?;
                sink.0.exchanges += 1;
                debug!("exchange at generation {generation}");
            }

            if training && generation.is_multiple_of(config.psi) {
                let samples = std::mem::take(&mut pending);
                match collect_and_train(
                    &mut dataset,
                    &samples,
                    snapshot.as_deref(),
                    trainer,
                    &mut manager_rng,
                ) {
                    Ok(next) => {
                        sink.on_training(&TrainingRecord {
                            generation,
                            version: next.version,
                            sample_count: next.sample_count,
                            train_rmse: next.train_rmse,
                        });
                        let next = Arc::new(next);
                        snapshot = Some(next.clone());
                        fresh_snapshot = Some(next);
                    }
                    Err(e) => {
                        warn!("surrogate training failed at generation {generation}, keeping the previous model: {e}");
                        sink.0.training_failures += 1;
                    }
                }
            }
        }

        let finished = pool
            .round((0..m).map(|_| Command::Finish).collect())
            .map_err(|(_, e)| e)?;
        let swarms = finished
            .into_iter()
            .map(|r| match r {
                Reply::Finished(s) => *s,
                _ => unreachable!("finish answers with the final state"),
            })
            .collect();
        Ok(swarms)
    })
    .map(|swarms| {
        finalize(
            swarms,
            log,
            start.elapsed(),
            snapshot.map(|s| (*s).clone()),
            final_block,
        )
    })
}
