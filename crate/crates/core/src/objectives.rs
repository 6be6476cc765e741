//! Fitness functions: the four synthetic benchmarks, an artificial-delay
//! wrapper that makes them expensive, and the grid-based landscape fitness
//! used when optimising an external landscape model.

use std::f64::consts::{E, PI};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::Bounds;
use crate::error::{Error, Result};

/// A black-box fitness function over a bounded box.
///
/// `evaluate` takes `&mut self` so that stateful evaluators (external
/// processes) fit the same interface; built-in benchmarks are pure.
pub trait Objective: Send {
    fn name(&self) -> &str;

    fn bounds(&self) -> &Bounds;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64>;
}

impl<O: Objective + ?Sized> Objective for Box<O> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn bounds(&self) -> &Bounds {
        (**self).bounds()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
}

/// Builds one objective instance per swarm worker, given the swarm id.
pub type ObjectiveFactory<'a> = dyn Fn(usize) -> Result<Box<dyn Objective>> + Sync + 'a;

pub fn spherical(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Rosenbrock valley with `a = 1`, `b = 100`. Needs at least two components.
pub fn rosenbrock(x: &[f64]) -> f64 {
    const A: f64 = 1.0;
    const B: f64 = 100.0;
    x.windows(2)
        .map(|w| B * (w[1] - w[0] * w[0]).powi(2) + (A - w[0]).powi(2))
        .sum()
}

/// Ackley with `a = 20`, `b = 0.2`, `c = 2π`.
pub fn ackley(x: &[f64]) -> f64 {
    const A: f64 = 20.0;
    const B: f64 = 0.2;
    const C: f64 = 2.0 * PI;
    let n = x.len() as f64;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_cos = x.iter().map(|v| (C * v).cos()).sum::<f64>() / n;
    -A * (-B * mean_sq.sqrt()).exp() - mean_cos.exp() + A + E
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Spherical,
    Rosenbrock,
    Ackley,
    Rastrigin,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::Spherical,
        BenchmarkKind::Rosenbrock,
        BenchmarkKind::Ackley,
        BenchmarkKind::Rastrigin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Spherical => "spherical",
            BenchmarkKind::Rosenbrock => "rosenbrock",
            BenchmarkKind::Ackley => "ackley",
            BenchmarkKind::Rastrigin => "rastrigin",
        }
    }

    /// Symmetric default search interval for every dimension.
    pub fn default_half_width(self) -> f64 {
        match self {
            BenchmarkKind::Spherical | BenchmarkKind::Rastrigin => 5.12,
            BenchmarkKind::Ackley => 32.768,
            BenchmarkKind::Rosenbrock => 2.048,
        }
    }

    pub fn default_bounds(self, dim: usize) -> Result<Bounds> {
        let w = self.default_half_width();
        Bounds::uniform(dim, -w, w)
    }

    /// Location of the global minimum (value 0).
    pub fn optimum(self, dim: usize) -> Vec<f64> {
        match self {
            BenchmarkKind::Rosenbrock => vec![1.0; dim],
            _ => vec![0.0; dim],
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            BenchmarkKind::Spherical => spherical(x),
            BenchmarkKind::Rosenbrock => rosenbrock(x),
            BenchmarkKind::Ackley => ackley(x),
            BenchmarkKind::Rastrigin => rastrigin(x),
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "problem",
                    format!("unknown benchmark `{s}` (spherical, rosenbrock, ackley, rastrigin)"),
                )
            })
    }
}

/// A built-in benchmark bound to a dimension and search box.
#[derive(Debug, Clone)]
pub struct Benchmark {
    kind: BenchmarkKind,
    bounds: Bounds,
}

impl Benchmark {
    pub fn new(kind: BenchmarkKind, dim: usize) -> Result<Self> {
        Self::with_bounds(kind, kind.default_bounds(dim)?)
    }

    pub fn with_bounds(kind: BenchmarkKind, bounds: Bounds) -> Result<Self> {
        if kind == BenchmarkKind::Rosenbrock && bounds.dim() < 2 {
            return Err(Error::config("dim", "rosenbrock needs at least 2 dimensions"));
        }
        Ok(Self { kind, bounds })
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }
}

impl Objective for Benchmark {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        self.bounds.check_dim(x.len())?;
        Ok(self.kind.eval(x))
    }
}

/// Sleeps for a fixed wall-clock time before every evaluation of `inner`.
#[derive(Debug, Clone)]
pub struct Delayed<O> {
    inner: O,
    delay: Duration,
}

pub fn with_delay<O: Objective>(objective: O, delay: Duration) -> Delayed<O> {
    Delayed {
        inner: objective,
        delay,
    }
}

impl<O> Delayed<O> {
    pub fn delay(&self) -> Duration {
        self.delay
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Objective> Objective for Delayed<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn bounds(&self) -> &Bounds {
        self.inner.bounds()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        self.inner.evaluate(x)
    }
}

/// Limits of the six free parameters of the crater-margin landscape problem:
/// rainfall (m/a), erodibility, n-value, m-value, marine and surface diffusion.
pub fn landscape_cm_bounds() -> Bounds {
    Bounds::new(
        vec![0.0, 3.0e-6, 0.0, 0.0, 0.3, 0.6],
        vec![3.0, 7.0e-6, 2.0, 2.0, 0.7, 1.0],
    )
    .expect("static bounds are valid")
}

/// Dense row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Data(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("ragged grid rows".into()));
        }
        let n = rows.len();
        Self::new(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Parses whitespace-separated rows, one grid row per non-empty line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| {
                        Error::Data(format!("line {}: `{t}`: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let grid = Self::from_rows(rows)?;
        if grid.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("grid contains non-finite values".into()));
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }
}

/// Erosion/deposition values at `J` fixed locations for each of `T` time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SedimentSeries {
    /// `values[t][j]`
    values: Vec<Vec<f64>>,
}

impl SedimentSeries {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let j = values.first().map_or(0, Vec::len);
        if values.is_empty() || j == 0 {
            return Err(Error::Data("sediment series is empty".into()));
        }
        if values.iter().any(|row| row.len() != j) {
            return Err(Error::Data("location count varies over time".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("sediment series contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn times(&self) -> usize {
        self.values.len()
    }

    pub fn locations(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Reads `time,location_id,value` rows (header required). Every
    /// (time, location) pair must appear exactly once.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            time: i64,
            location_id: i64,
            value: f64,
        }
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = rec?;
            rows.push(row);
        }
        let mut times: Vec<i64> = rows.iter().map(|r| r.time).collect();
        let mut locs: Vec<i64> = rows.iter().map(|r| r.location_id).collect();
        times.sort_unstable();
        times.dedup();
        locs.sort_unstable();
        locs.dedup();
        if rows.len() != times.len() * locs.len() {
            return Err(Error::Data(format!(
                "expected {} rows for {} times x {} locations, got {}",
                times.len() * locs.len(),
                times.len(),
                locs.len(),
                rows.len()
            )));
        }
        let mut values = vec![vec![f64::NAN; locs.len()]; times.len()];
        for r in rows {
            let t = times.binary_search(&r.time).expect("time present");
            let j = locs.binary_search(&r.location_id).expect("location present");
            if !values[t][j].is_nan() {
                return Err(Error::Data(format!(
                    "duplicate entry for time {} location {}",
                    r.time, r.location_id
                )));
            }
            values[t][j] = r.value;
        }
        Self::new(values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::from_csv(file)
    }
}

/// Ground-truth (or predicted) landscape observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrids {
    pub final_topography: Grid,
    pub sediment_series: SedimentSeries,
}

impl GroundTruthGrids {
    pub fn load(topography: &Path, sediment_csv: &Path) -> Result<Self> {
        Ok(Self {
            final_topography: Grid::load(topography)?,
            sediment_series: SedimentSeries::load(sediment_csv)?,
        })
    }
}

/// Root-mean-square elevation mismatch over all cells of the final topography.
pub fn topo_fitness(predicted: &Grid, truth: &Grid) -> Result<f64> {
    if predicted.shape() != truth.shape() {
        return Err(Error::Data(format!(
            "topography shapes differ: {:?} vs {:?}",
            predicted.shape(),
            truth.shape()
        )));
    }
    let n = truth.data.len();
    if n == 0 {
        return Err(Error::Data("empty topography grid".into()));
    }
    let sse: f64 = truth
        .data
        .iter()
        .zip(&predicted.data)
        .map(|(d, f)| (d - f).powi(2))
        .sum();
    Ok((sse / n as f64).sqrt())
}

/// Sediment mismatch normalised by `T + J` (time steps plus locations).
pub fn sed_fitness(predicted: &SedimentSeries, truth: &SedimentSeries) -> Result<f64> {
    let (t, j) = (truth.times(), truth.locations());
    if predicted.times() != t || predicted.locations() != j {
        return Err(Error::Data(format!(
            "sediment shapes differ: {}x{} vs {t}x{j}",
            predicted.times(),
            predicted.locations()
        )));
    }
    let sse: f64 = truth
        .values
        .iter()
        .flatten()
        .zip(predicted.values.iter().flatten())
        .map(|(z, g)| (z - g).powi(2))
        .sum();
    Ok((sse / (t + j) as f64).sqrt())
}

/// Weights for combining the topography and sediment terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridWeights {
    pub topo: f64,
    pub sed: f64,
}

impl Default for GridWeights {
    fn default() -> Self {
        Self { topo: 0.5, sed: 0.5 }
    }
}

pub fn combined_grid_fitness(
    predicted: &GroundTruthGrids,
    truth: &GroundTruthGrids,
    weights: GridWeights,
) -> Result<f64> {
    if !(weights.topo >= 0.0 && weights.sed >= 0.0 && weights.topo + weights.sed > 0.0) {
        return Err(Error::config(
            "weights",
            "weights must be non-negative with a positive sum",
        ));
    }
    let topo = topo_fitness(&predicted.final_topography, &truth.final_topography)?;
    let sed = sed_fitness(&predicted.sediment_series, &truth.sediment_series)?;
    Ok(weights.topo * topo + weights.sed * sed)
}
