//! Run configuration: a flat key-value TOML schema, defaults, mode
//! resolution and validation.
//!
//! Recognised keys (all optional):
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `mode` | `pso`, `dpso` or `sdpso` | inferred, else `sdpso` |
//! | `problem` | `spherical`, `rosenbrock`, `ackley`, `rastrigin`, `external` | `spherical` |
//! | `dim` | search-space dimension | 30 (or length of `lo`) |
//! | `lo`, `hi` | bounds: a number (all dims) or an array | per benchmark |
//! | `swarms` | number of swarms M | 8 (1 for `pso`) |
//! | `pop_size` | particles per swarm | 20 |
//! | `alpha`, `c1`, `c2` | inertia and acceleration coefficients | 0.729, 1.4, 1.4 |
//! | `psi` | surrogate interval (generations, ≥ 3) | 10 |
//! | `phi` | swap interval (generations) | 5 |
//! | `beta` | swap probability | 0.9 (0 for `pso`) |
//! | `s_prob` | surrogate probability | 0.5 (0 for `pso`/`dpso`) |
//! | `t_max` | evaluation budget per swarm | 10000 |
//! | `exchange_fraction` | share of a swarm that migrates | 0.2 |
//! | `delay` | artificial seconds per evaluation | 0 |
//! | `seed` | base random seed | 1 |
//! | `num_runs` | independent repetitions | 30 |
//! | `vmax_fraction` | velocity limit as a fraction of the bound width | 0.25 |
//! | `blend_pseudo`, `blend_past` | pseudo-fitness blend weights | 0.5, 0.5 |
//! | `hidden` | surrogate hidden sizes `[h1, h2]` | `[D, ceil(D/2)]` |
//! | `epochs`, `batch_size`, `learning_rate`, `sample_cap` | surrogate training | 20, 32, 1e-3, none |
//! | `model_command` | argv of the external model (`problem = "external"`) | none |
//! | `model_timeout` | seconds per external evaluation | 300 |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::Bounds;
use crate::error::{Error, Result};
use crate::extmodel::{EndpointSpec, RemoteObjective, DEFAULT_TIMEOUT};
use crate::objectives::{with_delay, Benchmark, BenchmarkKind, Objective};
use crate::pso::{BlendWeights, SwarmParams};
use crate::surrogate::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single serial swarm, no surrogate.
    Pso,
    /// Several exchanging swarms, no surrogate.
    Dpso,
    /// Several exchanging swarms with surrogate-estimated fitness.
    Sdpso,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Pso => "PSO",
            Mode::Dpso => "D-PSO",
            Mode::Sdpso => "SD-PSO",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "pso" => Ok(Mode::Pso),
            "dpso" => Ok(Mode::Dpso),
            "sdpso" => Ok(Mode::Sdpso),
            _ => Err(Error::config("mode", format!("unknown mode `{s}` (pso, dpso, sdpso)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Benchmark(BenchmarkKind),
    External { command: Vec<String>, timeout: Duration },
}

impl Problem {
    pub fn name(&self) -> String {
        match self {
            Problem::Benchmark(kind) => kind.name().to_owned(),
            Problem::External { command, .. } => {
                let program = command.first().map(String::as_str).unwrap_or("external");
                Path::new(program)
                    .file_name()
                    .and_then(|s| s.to_str())
                    .unwrap_or(program)
                    .to_owned()
            }
        }
    }
}

/// A bound given either as one number for every dimension or per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// The raw key-value form of a configuration, as read from a file or flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<String>,
    pub problem: Option<String>,
    pub dim: Option<usize>,
    pub lo: Option<BoundValue>,
    pub hi: Option<BoundValue>,
    pub swarms: Option<usize>,
    pub pop_size: Option<usize>,
    pub alpha: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub psi: Option<usize>,
    pub phi: Option<usize>,
    pub beta: Option<f64>,
    pub s_prob: Option<f64>,
    pub t_max: Option<usize>,
    pub exchange_fraction: Option<f64>,
    pub delay: Option<f64>,
    pub seed: Option<u64>,
    pub num_runs: Option<usize>,
    pub vmax_fraction: Option<f64>,
    pub blend_pseudo: Option<f64>,
    pub blend_past: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub sample_cap: Option<usize>,
    pub model_command: Option<Vec<String>>,
    pub model_timeout: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config file", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: ConfigFile) -> Self {
        overlay!(self, top;
            mode, problem, dim, lo, hi, swarms, pop_size, alpha, c1, c2, psi, phi,
            beta, s_prob, t_max, exchange_fraction, delay, seed, num_runs,
            vmax_fraction, blend_pseudo, blend_past, hidden, epochs, batch_size,
            learning_rate, sample_cap, model_command, model_timeout);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub problem: Problem,
    pub bounds: Bounds,
    pub swarms: usize,
    pub pop_size: usize,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub psi: usize,
    pub phi: usize,
    pub beta: f64,
    pub s_prob: f64,
    pub t_max: usize,
    pub exchange_fraction: f64,
    pub delay: Duration,
    pub seed: u64,
    pub num_runs: usize,
    pub vmax_fraction: f64,
    pub blend: BlendWeights,
    pub hidden: [usize; 2],
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_file(ConfigFile::default()).expect("defaults are valid")
    }
}

fn resolve_bound(value: &BoundValue, dim: usize, field: &str) -> Result<Vec<f64>> {
    match value {
        BoundValue::Scalar(v) => Ok(vec![*v; dim]),
        BoundValue::Vector(v) if v.len() == dim => Ok(v.clone()),
        BoundValue::Vector(v) => Err(Error::config(
            field,
            format!("has {} entries but dim is {dim}", v.len()),
        )),
    }
}

impl RunConfig {
    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let problem = match file.problem.as_deref().unwrap_or("spherical") {
            "external" => {
                let command = file.model_command.clone().unwrap_or_default();
                if command.is_empty() {
                    return Err(Error::config(
                        "model_command",
                        "required when problem = \"external\"",
                    ));
                }
                let secs = file.model_timeout.unwrap_or(DEFAULT_TIMEOUT.as_secs_f64());
                if !(secs.is_finite() && secs > 0.0) {
                    return Err(Error::config("model_timeout", "must be a positive number of seconds"));
                }
                Problem::External {
                    command,
                    timeout: Duration::from_secs_f64(secs),
                }
            }
            name => Problem::Benchmark(name.parse()?),
        };

        let vector_len = |b: &Option<BoundValue>| match b {
            Some(BoundValue::Vector(v)) => Some(v.len()),
            _ => None,
        };
        let dim = file
            .dim
            .or_else(|| vector_len(&file.lo))
            .or_else(|| vector_len(&file.hi))
            .unwrap_or(30);
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        let bounds = match (&problem, &file.lo, &file.hi) {
            (_, Some(lo), Some(hi)) => Bounds::new(
                resolve_bound(lo, dim, "lo")?,
                resolve_bound(hi, dim, "hi")?,
            )?,
            (Problem::Benchmark(kind), None, None) => kind.default_bounds(dim)?,
            (Problem::Benchmark(_), _, _) => {
                return Err(Error::config("lo/hi", "give both bounds or neither"))
            }
            (Problem::External { .. }, _, _) => {
                return Err(Error::config("lo/hi", "external problems need explicit bounds"))
            }
        };
        if let Problem::Benchmark(kind) = &problem {
            Benchmark::with_bounds(*kind, bounds.clone())?;
        }

        let mode = match &file.mode {
            Some(m) => m.parse()?,
            None if file.swarms == Some(1) => Mode::Pso,
            None if file.s_prob == Some(0.0) => Mode::Dpso,
            None => Mode::Sdpso,
        };
        let (swarms, beta, s_prob) = match mode {
            Mode::Pso => {
                if file.swarms.is_some_and(|m| m != 1) {
                    return Err(Error::config("swarms", "mode pso runs exactly one swarm"));
                }
                if file.s_prob.is_some_and(|p| p != 0.0) {
                    return Err(Error::config("s_prob", "mode pso does not use a surrogate"));
                }
                (1, 0.0, 0.0)
            }
            Mode::Dpso => {
                if file.s_prob.is_some_and(|p| p != 0.0) {
                    return Err(Error::config("s_prob", "mode dpso does not use a surrogate"));
                }
                (file.swarms.unwrap_or(8), file.beta.unwrap_or(0.9), 0.0)
            }
            Mode::Sdpso => (
                file.swarms.unwrap_or(8),
                file.beta.unwrap_or(0.9),
                file.s_prob.unwrap_or(0.5),
            ),
        };

        let hidden = match &file.hidden {
            None => [dim, dim.div_ceil(2)],
            Some(h) => <[usize; 2]>::try_from(h.as_slice())
                .map_err(|_| Error::config("hidden", "needs exactly two layer sizes"))?,
        };
        let delay = file.delay.unwrap_or(0.0);
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::config("delay", "must be a non-negative number of seconds"));
        }
        let defaults = TrainingConfig::default();
        let config = RunConfig {
            mode,
            problem,
            bounds,
            swarms,
            pop_size: file.pop_size.unwrap_or(20),
            alpha: file.alpha.unwrap_or(0.729),
            c1: file.c1.unwrap_or(1.4),
            c2: file.c2.unwrap_or(1.4),
            psi: file.psi.unwrap_or(10),
            phi: file.phi.unwrap_or(5),
            beta,
            s_prob,
            t_max: file.t_max.unwrap_or(10_000),
            exchange_fraction: file.exchange_fraction.unwrap_or(0.2),
            delay: Duration::from_secs_f64(delay),
            seed: file.seed.unwrap_or(1),
            num_runs: file.num_runs.unwrap_or(30),
            vmax_fraction: file.vmax_fraction.unwrap_or(0.25),
            blend: BlendWeights {
                pseudo: file.blend_pseudo.unwrap_or(0.5),
                past: file.blend_past.unwrap_or(0.5),
            },
            hidden,
            training: TrainingConfig {
                epochs: file.epochs.unwrap_or(defaults.epochs),
                batch_size: file.batch_size.unwrap_or(defaults.batch_size),
                learning_rate: file.learning_rate.unwrap_or(defaults.learning_rate),
                sample_cap: file.sample_cap.or(defaults.sample_cap),
                ..defaults
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(ConfigFile::load(path)?)
    }

    /// A benchmark configuration with library defaults, for programmatic use.
    pub fn benchmark(kind: BenchmarkKind, dim: usize, mode: Mode) -> Result<Self> {
        Self::from_file(ConfigFile {
            problem: Some(kind.name().into()),
            dim: Some(dim),
            mode: Some(format!("{mode:?}").to_lowercase()),
            ..ConfigFile::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.swarms == 0 {
            return fail("swarms", "must be at least 1");
        }
        if self.mode != Mode::Pso && self.swarms < 2 {
            return fail("swarms", "distributed modes need at least 2 swarms");
        }
        if self.pop_size < 2 {
            return fail("pop_size", "must be at least 2");
        }
        if self.psi < 3 {
            return fail("psi", "must be at least 3 so three fitness values exist before the surrogate is used");
        }
        if self.phi == 0 {
            return fail("phi", "must be at least 1");
        }
        for (field, v) in [("alpha", self.alpha), ("c1", self.c1), ("c2", self.c2)] {
            if !v.is_finite() {
                return fail(field, "must be finite");
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.s_prob) {
            return fail("s_prob", "must lie in [0, 1]");
        }
        if self.mode == Mode::Sdpso && self.s_prob == 0.0 {
            return fail("s_prob", "mode sdpso needs a positive surrogate probability");
        }
        if !(self.exchange_fraction > 0.0 && self.exchange_fraction <= 0.5) {
            return fail("exchange_fraction", "must lie in (0, 0.5]");
        }
        if self.t_max < self.pop_size {
            return fail("t_max", "must allow at least the initial population evaluation");
        }
        if self.num_runs == 0 {
            return fail("num_runs", "must be at least 1");
        }
        if !(self.vmax_fraction.is_finite() && self.vmax_fraction > 0.0) {
            return fail("vmax_fraction", "must be positive");
        }
        let b = self.blend;
        if !(b.pseudo >= 0.0 && b.past >= 0.0 && b.pseudo.is_finite() && b.past.is_finite()) {
            return fail("blend_pseudo/blend_past", "must be finite and non-negative");
        }
        if self.hidden.contains(&0) {
            return fail("hidden", "layer sizes must be at least 1");
        }
        self.training.validate()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Number of particles that migrate in one exchange.
    pub fn emigrant_count(&self) -> usize {
        (self.exchange_fraction * self.pop_size as f64).floor() as usize
    }

    pub fn swarm_params(&self) -> SwarmParams {
        SwarmParams {
            v_max: SwarmParams::velocity_limit(&self.bounds, self.vmax_fraction),
            bounds: self.bounds.clone(),
            pop_size: self.pop_size,
            alpha: self.alpha,
            c1: self.c1,
            c2: self.c2,
            s_prob: self.s_prob,
            blend: self.blend,
        }
    }

    /// Creates the objective a swarm worker evaluates, including the delay.
    pub fn build_objective(&self, _swarm_id: usize) -> Result<Box<dyn Objective>> {
        match &self.problem {
            Problem::Benchmark(kind) => {
                let bench = Benchmark::with_bounds(*kind, self.bounds.clone())?;
                Ok(Box::new(with_delay(bench, self.delay)))
            }
            Problem::External { command, timeout } => {
                let spec = EndpointSpec::new(command[0].clone(), command[1..].to_vec(), self.bounds.clone())
                    .with_timeout(*timeout);
                let remote = RemoteObjective::spawn(spec)?;
                Ok(Box::new(with_delay(remote, self.delay)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_file(ConfigFile::parse(text)?)
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn defaults_are_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.mode, Mode::Sdpso);
        assert_eq!((c.swarms, c.pop_size), (8, 20));
        assert_eq!((c.alpha, c.c1, c.c2), (0.729, 1.4, 1.4));
        assert_eq!((c.psi, c.phi), (10, 5));
        assert_eq!(c.s_prob, 0.5);
        assert_eq!(c.hidden, [30, 15]);
        assert_eq!(c.emigrant_count(), 4);
        assert_eq!(c.bounds, BenchmarkKind::Spherical.default_bounds(30).unwrap());
    }

    #[test]
    fn dpso_reference_config_is_valid() {
        let c = parse("mode = \"dpso\"\nswarms = 8\npop_size = 20\nalpha = 0.729\nc1 = 1.4\nc2 = 1.4\n").unwrap();
        assert_eq!(c.mode, Mode::Dpso);
        assert_eq!(c.s_prob, 0.0);
    }

    #[test]
    fn pso_mode_forces_single_swarm() {
        let c = parse("mode = \"pso\"").unwrap();
        assert_eq!((c.swarms, c.beta, c.s_prob), (1, 0.0, 0.0));
        assert_eq!(field_of(parse("mode = \"pso\"\nswarms = 4").unwrap_err()), "swarms");
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(field_of(parse("psi = 2").unwrap_err()), "psi");
        assert_eq!(field_of(parse("s_prob = 1.3").unwrap_err()), "s_prob");
        assert_eq!(field_of(parse("pop_size = 1").unwrap_err()), "pop_size");
        assert_eq!(field_of(parse("phi = 0").unwrap_err()), "phi");
        assert_eq!(field_of(parse("exchange_fraction = 0.7").unwrap_err()), "exchange_fraction");
        assert_eq!(field_of(parse("mode = \"dpso\"\nswarms = 1").unwrap_err()), "swarms");
        assert_eq!(field_of(parse("problem = \"external\"").unwrap_err()), "model_command");
        assert_eq!(field_of(parse("problem = \"rosenbrock\"\ndim = 1").unwrap_err()), "dim");
        assert!(parse("unknown_key = 3").is_err());
    }

    #[test]
    fn bounds_from_scalars_and_vectors() {
        let c = parse("dim = 3\nlo = -1.0\nhi = [1.0, 2.0, 3.0]").unwrap();
        assert_eq!(c.bounds.hi(), &[1.0, 2.0, 3.0]);
        assert_eq!(c.bounds.lo(), &[-1.0; 3]);
        let c = parse("lo = [0.0, 0.0]\nhi = [1.0, 1.0]").unwrap();
        assert_eq!(c.dim(), 2);
        assert!(parse("dim = 3\nlo = [0.0]\nhi = 1.0").is_err());
    }

    #[test]
    fn external_problem_config() {
        let c = parse(
            "problem = \"external\"\nmodel_command = [\"/usr/bin/model\", \"--fast\"]\nlo = [0.0, 3.0e-6]\nhi = [3.0, 7.0e-6]\nhidden = [20, 10]\nmodel_timeout = 60",
        )
        .unwrap();
        assert_eq!(c.problem.name(), "model");
        assert_eq!(c.hidden, [20, 10]);
        assert!(matches!(c.problem, Problem::External { timeout, .. } if timeout == Duration::from_secs(60)));
    }

    #[test]
    fn overlay_prefers_top_values() {
        let base = ConfigFile::parse("psi = 12\nseed = 3").unwrap();
        let top = ConfigFile {
            seed: Some(9),
            ..ConfigFile::default()
        };
        let merged = base.overlay(top);
        assert_eq!((merged.psi, merged.seed), (Some(12), Some(9)));
        let again = ConfigFile::parse(&merged.to_toml()).unwrap();
        assert_eq!(again, merged);
    }

    #[test]
    fn mode_labels_parse() {
        for m in [Mode::Pso, Mode::Dpso, Mode::Sdpso] {
            assert_eq!(m.label().parse::<Mode>().unwrap(), m);
        }
    }
}
