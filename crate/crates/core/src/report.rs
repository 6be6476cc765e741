//! CSV log schemas and the summary statistics computed from them.
//!
//! A results directory holds:
//!
//! | file | columns |
//! |------|---------|
//! | `generations.csv` | run, swarm, generation, gbest, evals, true_evals, surrogate_calls, tee_count |
//! | `surrogate_training.csv` | run, version, sample_count, train_rmse |
//! | `verification.csv` | run, swarm, generation, pseudo_fitness, true_fitness |
//! | `runs.csv` | run, seed, method, problem, dim, status, elapsed_seconds, error |
//! | `summary.csv` | method, problem, D, mean, std, best, worst, elapsed_seconds, prediction_rmse, true_evals, train_rmse_mean, train_rmse_std, runs, failed_runs |
//!
//! Counters in `generations.csv` are cumulative per swarm. Summaries are a
//! pure function of the first four files: [`summarize`] is used both when
//! an experiment finishes and by [`recompute_summary`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::RunLog;
use crate::surrogate::prediction_rmse;

pub const GENERATIONS_CSV: &str = "generations.csv";
pub const TRAINING_CSV: &str = "surrogate_training.csv";
pub const VERIFICATION_CSV: &str = "verification.csv";
pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub run: usize,
    pub swarm: usize,
    pub generation: usize,
    pub gbest: f64,
    pub evals: usize,
    pub true_evals: usize,
    pub surrogate_calls: usize,
    pub tee_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub run: usize,
    pub version: u64,
    pub sample_count: usize,
    pub train_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub run: usize,
    pub swarm: usize,
    pub generation: usize,
    pub pseudo_fitness: f64,
    pub true_fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub method: String,
    pub problem: String,
    pub dim: usize,
    pub status: RunStatus,
    pub elapsed_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: String,
    pub problem: String,
    #[serde(rename = "D")]
    pub dim: usize,
    /// Statistics of the final best fitness over completed runs.
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub best: f64,
    pub worst: f64,
    /// Mean wall time of a completed run.
    pub elapsed_seconds: f64,
    /// RMSE of pseudo against true fitness over all verification pairs.
    pub prediction_rmse: Option<f64>,
    /// Mean number of true objective calls per run.
    pub true_evals: f64,
    pub train_rmse_mean: Option<f64>,
    pub train_rmse_std: Option<f64>,
    pub runs: usize,
    pub failed_runs: usize,
}

/// All rows of one results directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentLogs {
    pub generations: Vec<GenerationRow>,
    pub training: Vec<TrainingRow>,
    pub verification: Vec<VerificationRow>,
    pub runs: Vec<RunRow>,
}

impl ExperimentLogs {
    /// Appends the records of run `run`.
    pub fn push_run(&mut self, row: RunRow, log: &RunLog) {
        let run = row.run;
        self.generations.extend(log.generations.iter().map(|g| GenerationRow {
            run,
            swarm: g.swarm,
            generation: g.generation,
            gbest: g.gbest,
            evals: g.evals,
            true_evals: g.true_evals,
            surrogate_calls: g.surrogate_calls,
            tee_count: g.tee_count,
        }));
        self.training.extend(log.training.iter().map(|t| TrainingRow {
            run,
            version: t.version,
            sample_count: t.sample_count,
            train_rmse: t.train_rmse,
        }));
        self.verification.extend(log.verification.iter().map(|p| VerificationRow {
            run,
            swarm: p.swarm_id,
            generation: p.generation,
            pseudo_fitness: p.pseudo_fitness,
            true_fitness: p.true_fitness,
        }));
        self.runs.push(row);
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            generations: read_csv(&dir.join(GENERATIONS_CSV))?,
            training: read_csv(&dir.join(TRAINING_CSV))?,
            verification: read_csv(&dir.join(VERIFICATION_CSV))?,
            runs: read_csv(&dir.join(RUNS_CSV))?,
        })
    }
}

/// A row type with a fixed column order.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for GenerationRow {
    const HEADER: &'static [&'static str] = &[
        "run", "swarm", "generation", "gbest", "evals", "true_evals", "surrogate_calls", "tee_count",
    ];
}

impl CsvRow for TrainingRow {
    const HEADER: &'static [&'static str] = &["run", "version", "sample_count", "train_rmse"];
}

impl CsvRow for VerificationRow {
    const HEADER: &'static [&'static str] =
        &["run", "swarm", "generation", "pseudo_fitness", "true_fitness"];
}

impl CsvRow for RunRow {
    const HEADER: &'static [&'static str] = &[
        "run", "seed", "method", "problem", "dim", "status", "elapsed_seconds", "error",
    ];
}

impl CsvRow for ExperimentSummary {
    const HEADER: &'static [&'static str] = &[
        "method", "problem", "D", "mean", "std", "best", "worst", "elapsed_seconds",
        "prediction_rmse", "true_evals", "train_rmse_mean", "train_rmse_std", "runs", "failed_runs",
    ];
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = CsvLog::<T>::create(path)?;
    for row in rows {
        writer.append(row)?;
    }
    writer.flush()
}

/// A CSV file written row by row, header included even when empty.
pub struct CsvLog<T> {
    writer: csv::Writer<File>,
    _rows: std::marker::PhantomData<T>,
}

impl<T: CsvRow> CsvLog<T> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(T::HEADER)?;
        Ok(Self {
            writer,
            _rows: std::marker::PhantomData,
        })
    }

    pub fn append(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Streams per-run logs into a results directory, flushing after each run
/// so that an interrupted experiment keeps everything written so far.
pub struct LogWriter {
    generations: CsvLog<GenerationRow>,
    training: CsvLog<TrainingRow>,
    verification: CsvLog<VerificationRow>,
    runs: CsvLog<RunRow>,
}

impl LogWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        Ok(Self {
            generations: CsvLog::create(&dir.join(GENERATIONS_CSV))?,
            training: CsvLog::create(&dir.join(TRAINING_CSV))?,
            verification: CsvLog::create(&dir.join(VERIFICATION_CSV))?,
            runs: CsvLog::create(&dir.join(RUNS_CSV))?,
        })
    }

    /// Writes the rows of `logs` belonging to run `run`.
    pub fn write_run(&mut self, logs: &ExperimentLogs, run: usize) -> Result<()> {
        for r in logs.generations.iter().filter(|r| r.run == run) {
            self.generations.append(r)?;
        }
        for r in logs.training.iter().filter(|r| r.run == run) {
            self.training.append(r)?;
        }
        for r in logs.verification.iter().filter(|r| r.run == run) {
            self.verification.append(r)?;
        }
        for r in logs.runs.iter().filter(|r| r.run == run) {
            self.runs.append(r)?;
        }
        self.generations.flush()?;
        self.training.flush()?;
        self.verification.flush()?;
        self.runs.flush()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Final best fitness and total true evaluations of each run, taken from
/// the last generation logged for every swarm.
pub fn final_states(generations: &[GenerationRow]) -> BTreeMap<usize, (f64, usize)> {
    let mut last: BTreeMap<(usize, usize), &GenerationRow> = BTreeMap::new();
    for row in generations {
        let entry = last.entry((row.run, row.swarm)).or_insert(row);
        if row.generation >= entry.generation {
            *entry = row;
        }
    }
    let mut out: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ((run, _), row) in last {
        let e = out.entry(run).or_insert((f64::INFINITY, 0));
        e.0 = e.0.min(row.gbest);
        e.1 += row.true_evals;
    }
    out
}

/// Summary statistics over the completed runs in `logs`.
pub fn summarize(logs: &ExperimentLogs) -> Result<ExperimentSummary> {
    let completed: Vec<&RunRow> = logs.runs.iter().filter(|r| r.status == RunStatus::Ok).collect();
    let first = completed
        .first()
        .ok_or_else(|| Error::Data("no completed runs to summarise".into()))?;
    let finals = final_states(&logs.generations);
    let mut fitness = Vec::with_capacity(completed.len());
    let mut true_evals = Vec::with_capacity(completed.len());
    let mut elapsed = Vec::with_capacity(completed.len());
    for row in &completed {
        let (best, evals) = finals
            .get(&row.run)
            .ok_or_else(|| Error::Data(format!("run {} has no generation records", row.run)))?;
        fitness.push(*best);
        true_evals.push(*evals as f64);
        elapsed.push(row.elapsed_seconds);
    }
    let ok = |run: usize| completed.iter().any(|r| r.run == run);
    let pairs: Vec<(f64, f64)> = logs
        .verification
        .iter()
        .filter(|v| ok(v.run))
        .map(|v| (v.true_fitness, v.pseudo_fitness))
        .collect();
    let train: Vec<f64> = logs
        .training
        .iter()
        .filter(|t| ok(t.run))
        .map(|t| t.train_rmse)
        .collect();
    let (mean, std) = mean_std(&fitness).expect("at least one completed run");
    let train_stats = mean_std(&train);
    Ok(ExperimentSummary {
        method: first.method.clone(),
        problem: first.problem.clone(),
        dim: first.dim,
        mean,
        std,
        best: fitness.iter().copied().fold(f64::INFINITY, f64::min),
        worst: fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        elapsed_seconds: mean_std(&elapsed).expect("non-empty").0,
        prediction_rmse: prediction_rmse(&pairs),
        true_evals: mean_std(&true_evals).expect("non-empty").0,
        train_rmse_mean: train_stats.map(|s| s.0),
        train_rmse_std: train_stats.map(|s| s.1),
        runs: completed.len(),
        failed_runs: logs.runs.len() - completed.len(),
    })
}

/// Reads the logs in `dir` and recomputes its summary.
pub fn recompute_summary(dir: &Path) -> Result<ExperimentSummary> {
    summarize(&ExperimentLogs::read(dir)?)
}

/// Renders summaries as an aligned text table.
pub fn format_table(rows: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<12} {:>4} {:>12} {:>12} {:>12} {:>12} {:>10} {:>12}",
        "method", "problem", "D", "mean", "std", "best", "worst", "time[s]", "pred_rmse"
    );
    for s in rows {
        let rmse = s
            .prediction_rmse
            .map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        let _ = writeln!(
            out,
            "{:<14} {:<12} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3} {:>12}",
            s.method, s.problem, s.dim, s.mean, s.std, s.best, s.worst, s.elapsed_seconds, rmse
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{GenerationRecord, TrainingRecord};
    use crate::pso::VerificationPair;
    use proptest::prelude::*;

    fn run_row(run: usize, status: RunStatus, elapsed: f64) -> RunRow {
        RunRow {
            run,
            seed: 1 + run as u64 * 10007,
            method: "SD-PSO(0.50)".into(),
            problem: "spherical".into(),
            dim: 2,
            status,
            elapsed_seconds: elapsed,
            error: (status == RunStatus::Failed).then(|| "boom".into()),
        }
    }

    fn log_with(finals: &[f64]) -> RunLog {
        let mut log = RunLog::default();
        for (swarm, &f) in finals.iter().enumerate() {
            for generation in 1..=3 {
                log.generations.push(GenerationRecord {
                    swarm,
                    generation,
                    gbest: f + (3 - generation) as f64,
                    evals: generation * 4,
                    true_evals: generation * 4,
                    surrogate_calls: 0,
                    tee_count: 0,
                    surrogate_version: 0,
                });
            }
        }
        log.training.push(TrainingRecord {
            generation: 3,
            version: 1,
            sample_count: 24,
            train_rmse: finals[0],
        });
        log.verification.push(VerificationPair {
            swarm_id: 0,
            generation: 3,
            pseudo_fitness: 0.0,
            true_fitness: 3.0,
        });
        log
    }

    #[test]
    fn summary_statistics() {
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Ok, 2.0), &log_with(&[3.2, 1.1, 5.0]));
        logs.push_run(run_row(1, RunStatus::Ok, 4.0), &log_with(&[2.0, 3.1]));
        logs.push_run(run_row(2, RunStatus::Failed, 9.0), &log_with(&[0.0]));
        let s = summarize(&logs).unwrap();
        assert_eq!((s.best, s.worst), (1.1, 2.0));
        assert!((s.mean - 1.55).abs() < 1e-15);
        assert!((s.std - 0.45).abs() < 1e-15);
        assert_eq!(s.elapsed_seconds, 3.0);
        assert_eq!(s.true_evals, (36.0 + 24.0) / 2.0);
        assert_eq!(s.prediction_rmse, Some(3.0));
        assert_eq!((s.runs, s.failed_runs), (2, 1));
        assert!(s.best <= s.mean && s.mean <= s.worst && s.std >= 0.0);
    }

    #[test]
    fn single_run_has_zero_spread() {
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Ok, 1.0), &log_with(&[0.25]));
        let s = summarize(&logs).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!((s.best, s.worst, s.mean), (0.25, 0.25, 0.25));
    }

    #[test]
    fn no_completed_runs_is_an_error() {
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Failed, 1.0), &RunLog::default());
        assert!(matches!(summarize(&logs), Err(Error::Data(_))));
    }

    #[test]
    fn logs_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Ok, 0.1 + 0.2), &log_with(&[1.0 / 3.0, 2.0_f64.sqrt()]));
        logs.push_run(run_row(1, RunStatus::Failed, 1e-300), &log_with(&[f64::MIN_POSITIVE]));
        let mut w = LogWriter::create(dir.path()).unwrap();
        w.write_run(&logs, 0).unwrap();
        w.write_run(&logs, 1).unwrap();
        let back = ExperimentLogs::read(dir.path()).unwrap();
        assert_eq!(back, logs);
        assert_eq!(recompute_summary(dir.path()).unwrap(), summarize(&logs).unwrap());

        let summary = summarize(&logs).unwrap();
        let path = dir.path().join(SUMMARY_CSV);
        write_csv(&path, std::slice::from_ref(&summary)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "method,problem,D,mean,std,best,worst,elapsed_seconds,prediction_rmse,"
        ));
        assert_eq!(read_csv::<ExperimentSummary>(&path).unwrap(), vec![summary]);
    }

    #[test]
    fn empty_logs_still_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        LogWriter::create(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(GENERATIONS_CSV)).unwrap();
        assert_eq!(
            text.trim(),
            "run,swarm,generation,gbest,evals,true_evals,surrogate_calls,tee_count"
        );
        assert!(ExperimentLogs::read(dir.path()).unwrap().generations.is_empty());
    }

    fn serde_header<T: CsvRow>(row: &T) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        text.lines().next().unwrap().to_owned()
    }

    #[test]
    fn declared_headers_match_field_names() {
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Ok, 1.0), &log_with(&[0.5]));
        let summary = summarize(&logs).unwrap();
        assert_eq!(serde_header(&logs.generations[0]), GenerationRow::HEADER.join(","));
        assert_eq!(serde_header(&logs.training[0]), TrainingRow::HEADER.join(","));
        assert_eq!(serde_header(&logs.verification[0]), VerificationRow::HEADER.join(","));
        assert_eq!(serde_header(&logs.runs[0]), RunRow::HEADER.join(","));
        assert_eq!(serde_header(&summary), ExperimentSummary::HEADER.join(","));
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "run,version,sample_count\n0,1,5\n").unwrap();
        let err = read_csv::<TrainingRow>(&path).unwrap_err().to_string();
        assert!(err.contains("train_rmse"), "{err}");
    }

    #[test]
    fn table_lists_every_summary() {
        let mut logs = ExperimentLogs::default();
        logs.push_run(run_row(0, RunStatus::Ok, 1.0), &log_with(&[0.5]));
        let table = format_table(&[summarize(&logs).unwrap()]);
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("SD-PSO(0.50)"));
    }

    proptest! {
        #[test]
        fn mean_std_ordering(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let (mean, std) = mean_std(&values).unwrap();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(std >= 0.0);
            prop_assert!(lo - 1e-9 * lo.abs().max(1.0) <= mean && mean <= hi + 1e-9 * hi.abs().max(1.0));
        }
    }
}
