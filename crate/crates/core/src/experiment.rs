//! Repeated independent runs, their logs and summaries, and surrogate
//! probability sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::orchestrator::{run_with, MlpTrainer, RunLog, RunResult};
use crate::report::{
    self, summarize, write_csv, CsvRow, ExperimentLogs, ExperimentSummary, LogWriter, RunRow,
    RunStatus,
};

/// Seed spacing between consecutive runs.
pub const RUN_SEED_STRIDE: u64 = 10007;

/// Seed of run `run` given the configured base seed.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64 * RUN_SEED_STRIDE)
}

/// Label used in summaries, e.g. `D-PSO` or `SD-PSO(0.50)`.
pub fn method_label(config: &RunConfig) -> String {
    match config.mode {
        Mode::Sdpso => format!("{}({:.2})", config.mode.label(), config.s_prob),
        mode => mode.label().to_owned(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Directory for the CSV logs and summary; nothing is written if `None`.
    pub out_dir: Option<PathBuf>,
    /// Run repetitions concurrently. Wall times then include contention.
    pub parallel: bool,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub logs: ExperimentLogs,
    /// Results of the completed runs, in run order.
    pub results: Vec<RunResult>,
}

fn run_once(config: &RunConfig, run: usize) -> (RunRow, RunLog, Option<RunResult>) {
    let mut cfg = config.clone();
    cfg.seed = run_seed(config.seed, run);
    let mut partial = RunLog::default();
    let outcome = run_with(
        &cfg,
        &|m| cfg.build_objective(m),
        &mut MlpTrainer::from_config(&cfg),
        &mut partial,
    );
    let mut row = RunRow {
        run,
        seed: cfg.seed,
        method: method_label(config),
        problem: config.problem.name(),
        dim: config.dim(),
        status: RunStatus::Ok,
        elapsed_seconds: 0.0,
        error: None,
    };
    match outcome {
        Ok(result) => {
            row.elapsed_seconds = result.elapsed.as_secs_f64();
            let log = result.log.clone();
            (row, log, Some(result))
        }
        Err(e) => {
            warn!("run {run} failed: {e}");
            row.status = RunStatus::Failed;
            row.error = Some(e.to_string());
            (row, partial, None)
        }
    }
}

/// Runs `config.num_runs` independent repetitions with seeds
/// `seed + r * 10007`, writes their logs and returns the summary over the
/// completed runs. Fails only if no run completes.
pub fn run_experiment(config: &RunConfig, options: &ExperimentOptions) -> Result<ExperimentReport> {
    config.validate()?;
    let mut writer = options.out_dir.as_deref().map(LogWriter::create).transpose()?;
    let mut logs = ExperimentLogs::default();
    let mut results = Vec::new();
    let mut record = |row: RunRow, log: RunLog, result: Option<RunResult>| -> Result<()> {
        let run = row.run;
        info!(
            "{} run {run}: {:?} in {:.3}s",
            row.method, row.status, row.elapsed_seconds
        );
        logs.push_run(row, &log);
        if let Some(w) = writer.as_mut() {
            w.write_run(&logs, run)?;
        }
        results.extend(result);
        Ok(())
    };

    if options.parallel {
        let limit = thread::available_parallelism().map_or(1, |n| n.get());
        let runs: Vec<usize> = (0..config.num_runs).collect();
        for chunk in runs.chunks(limit) {
            let outcomes: Vec<_> = thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&r| s.spawn(move || run_once(config, r)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("run thread panicked"))
                    .collect()
            });
            for (row, log, result) in outcomes {
                record(row, log, result)?;
            }
        }
    } else {
        for r in 0..config.num_runs {
            let (row, log, result) = run_once(config, r);
            record(row, log, result)?;
        }
    }

    let summary = summarize(&logs)?;
    if summary.failed_runs > 0 {
        warn!(
            "{} of {} runs failed; summary covers the completed runs",
            summary.failed_runs, config.num_runs
        );
    }
    if let Some(dir) = &options.out_dir {
        write_csv(&dir.join(report::SUMMARY_CSV), std::slice::from_ref(&summary))?;
    }
    Ok(ExperimentReport {
        summary,
        logs,
        results,
    })
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s_prob: f64,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub best: f64,
    pub worst: f64,
    pub elapsed_seconds: f64,
    pub prediction_rmse: Option<f64>,
    pub true_evals: f64,
    pub runs: usize,
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] = &[
        "s_prob", "method", "mean", "std", "best", "worst", "elapsed_seconds", "prediction_rmse",
        "true_evals", "runs",
    ];
}

pub const SWEEP_CSV: &str = "sweep.csv";

/// Subdirectory holding the logs of one sweep point.
pub fn sweep_dir(root: &Path, s_prob: f64) -> PathBuf {
    root.join(format!("s_prob_{s_prob:.2}"))
}

/// Runs one experiment per surrogate probability with shared seeds.
/// Probability 0 runs the plain distributed algorithm.
pub fn sweep_sprob(
    config: &RunConfig,
    probabilities: &[f64],
    options: &ExperimentOptions,
) -> Result<Vec<(f64, ExperimentReport)>> {
    if probabilities.is_empty() {
        return Err(Error::config("probabilities", "at least one surrogate probability is required"));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::config("probabilities", format!("{p} is outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(probabilities.len());
    for &p in probabilities {
        let mut cfg = config.clone();
        cfg.s_prob = p;
        cfg.mode = if p == 0.0 { Mode::Dpso } else { Mode::Sdpso };
        if cfg.mode == Mode::Dpso && cfg.swarms < 2 {
            cfg.mode = Mode::Pso;
        }
        let opts = ExperimentOptions {
            out_dir: options.out_dir.as_deref().map(|d| sweep_dir(d, p)),
            parallel: options.parallel,
        };
        out.push((p, run_experiment(&cfg, &opts)?));
    }
    if let Some(dir) = &options.out_dir {
        let rows: Vec<SweepRow> = out
            .iter()
            .map(|(p, r)| {
                let s = &r.summary;
                SweepRow {
                    s_prob: *p,
                    method: s.method.clone(),
                    mean: s.mean,
                    std: s.std,
                    best: s.best,
                    worst: s.worst,
                    elapsed_seconds: s.elapsed_seconds,
                    prediction_rmse: s.prediction_rmse,
                    true_evals: s.true_evals,
                    runs: s.runs,
                }
            })
            .collect();
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        write_csv(&dir.join(SWEEP_CSV), &rows)?;
    }
    Ok(out)
}
