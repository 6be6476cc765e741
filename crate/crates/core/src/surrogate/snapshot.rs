//! Immutable trained surrogate plus its normalisation statistics.
//!
//! # File format
//!
//! Snapshots persist as UTF-8 text, one `key values...` record per line:
//!
//! ```text
//! sdpso-surrogate 1
//! version 3
//! sample_count 600
//! train_rmse 0.0123
//! layers 5 5 3 1
//! input_lo -5.12 -5.12 -5.12 -5.12 -5.12
//! input_hi 5.12 5.12 5.12 5.12 5.12
//! target_range 0.31 48.2
//! weights 0 <h1*D values, row-major [out][in]>
//! bias 0 <h1 values>
//! weights 1 ...
//! bias 1 ...
//! weights 2 ...
//! bias 2 ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so loading a saved
//! snapshot reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::domain::{Bounds, Stream};
use crate::error::{Error, Result};

use super::network::Mlp;

const MAGIC: &str = "sdpso-surrogate";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSnapshot {
    /// Training-round counter; 0 means never trained.
    pub version: u64,
    /// Training RMSE in original fitness units.
    pub train_rmse: f64,
    pub sample_count: usize,
    pub(crate) network: Mlp,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    target_min: f64,
    target_max: f64,
}

impl SurrogateSnapshot {
    /// A randomly initialised, untrained model (version 0).
    pub fn untrained(bounds: &Bounds, hidden: [usize; 2], rng: &mut Stream) -> Self {
        Self::from_network(Mlp::new(bounds.dim(), hidden, rng), bounds)
    }

    /// Wraps an existing network with identity target scaling.
    pub fn from_network(network: Mlp, bounds: &Bounds) -> Self {
        Self {
            version: 0,
            train_rmse: f64::NAN,
            sample_count: 0,
            network,
            input_lo: bounds.lo().to_vec(),
            input_hi: bounds.hi().to_vec(),
            target_min: 0.0,
            target_max: 1.0,
        }
    }

    pub fn network(&self) -> &Mlp {
        &self.network
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        self.network.sizes()
    }

    pub fn hidden(&self) -> [usize; 2] {
        let s = self.layer_sizes();
        [s[1], s[2]]
    }

    pub fn target_range(&self) -> (f64, f64) {
        (self.target_min, self.target_max)
    }

    pub(crate) fn set_target_range(&mut self, min: f64, max: f64) {
        self.target_min = min;
        self.target_max = max;
    }

    fn target_scale(&self) -> f64 {
        let span = self.target_max - self.target_min;
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }

    /// Maps a position into `[-1, 1]^D` using the problem bounds.
    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
            .collect()
    }

    pub fn normalize_target(&self, f: f64) -> f64 {
        (f - self.target_min) / self.target_scale()
    }

    pub fn denormalize_target(&self, y: f64) -> f64 {
        y * self.target_scale() + self.target_min
    }

    /// Network output for `x` in normalised target space.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.network.input_dim() {
            return Err(Error::config(
                "dimension",
                format!(
                    "surrogate expects {} inputs, got {}",
                    self.network.input_dim(),
                    x.len()
                ),
            ));
        }
        Ok(self.network.forward(&self.normalize_input(x)))
    }

    /// Pseudo-fitness estimate in original fitness units.
    pub fn predict_pseudo_fitness(&self, x: &[f64]) -> Result<f64> {
        if self.version == 0 {
            return Err(Error::Precondition(
                "surrogate has not been trained yet".into(),
            ));
        }
        Ok(self.denormalize_target(self.forward(x)?))
    }

    pub fn to_text(&self) -> String {
        fn join(values: &[f64]) -> String {
            values
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        }
        let mut out = String::new();
        let s = self.layer_sizes();
        let _ = writeln!(out, "{MAGIC} {FORMAT}");
        let _ = writeln!(out, "version {}", self.version);
        let _ = writeln!(out, "sample_count {}", self.sample_count);
        let _ = writeln!(out, "train_rmse {:?}", self.train_rmse);
        let _ = writeln!(out, "layers {} {} {} {}", s[0], s[1], s[2], s[3]);
        let _ = writeln!(out, "input_lo {}", join(&self.input_lo));
        let _ = writeln!(out, "input_hi {}", join(&self.input_hi));
        let _ = writeln!(out, "target_range {:?} {:?}", self.target_min, self.target_max);
        for (i, layer) in self.network.layers.iter().enumerate() {
            let _ = writeln!(out, "weights {i} {}", join(&layer.weights));
            let _ = writeln!(out, "bias {i} {}", join(&layer.bias));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |key: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("snapshot truncated before `{key}`")))?;
            let mut tokens = line.split_whitespace().map(str::to_owned);
            match tokens.next() {
                Some(k) if k == key => Ok(tokens.collect()),
                other => Err(Error::Data(format!(
                    "snapshot: expected `{key}`, found {other:?}"
                ))),
            }
        };
        fn floats(tokens: &[String]) -> Result<Vec<f64>> {
            tokens
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Data(format!("snapshot: `{t}`: {e}")))
                })
                .collect()
        }
        fn ints(tokens: &[String]) -> Result<Vec<usize>> {
            tokens
                .iter()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| Error::Data(format!("snapshot: `{t}`: {e}")))
                })
                .collect()
        }
        fn one<T: Copy>(values: Vec<T>, key: &str) -> Result<T> {
            match values.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::Data(format!("snapshot: `{key}` needs one value"))),
            }
        }

        let header = next(MAGIC)?;
        if header.first().map(String::as_str) != Some("1") {
            return Err(Error::Data(format!("unsupported snapshot format {header:?}")));
        }
        let version = one(ints(&next("version")?)?, "version")? as u64;
        let sample_count = one(ints(&next("sample_count")?)?, "sample_count")?;
        let train_rmse = one(floats(&next("train_rmse")?)?, "train_rmse")?;
        let sizes = ints(&next("layers")?)?;
        let [d, h1, h2, out] = <[usize; 4]>::try_from(sizes)
            .map_err(|_| Error::Data("snapshot: `layers` needs four sizes".into()))?;
        if out != 1 {
            return Err(Error::Data("snapshot: output layer must have one unit".into()));
        }
        let input_lo = floats(&next("input_lo")?)?;
        let input_hi = floats(&next("input_hi")?)?;
        let bounds = Bounds::new(input_lo, input_hi)
            .map_err(|e| Error::Data(format!("snapshot input range: {e}")))?;
        if bounds.dim() != d {
            return Err(Error::Data("snapshot: input range does not match layers".into()));
        }
        let range = floats(&next("target_range")?)?;
        let [target_min, target_max] = <[f64; 2]>::try_from(range)
            .map_err(|_| Error::Data("snapshot: `target_range` needs two values".into()))?;

        let mut network = Mlp::zeros(d, [h1, h2]);
        for (i, layer) in network.layers.iter_mut().enumerate() {
            for (key, dest) in [("weights", &mut layer.weights), ("bias", &mut layer.bias)] {
                let tokens = next(key)?;
                if tokens.first().map(String::as_str) != Some(&i.to_string()) {
                    return Err(Error::Data(format!("snapshot: `{key}` for layer {i} out of order")));
                }
                let values = floats(&tokens[1..])?;
                if values.len() != dest.len() {
                    return Err(Error::Data(format!(
                        "snapshot: layer {i} {key} needs {} values, got {}",
                        dest.len(),
                        values.len()
                    )));
                }
                *dest = values;
            }
        }

        let mut snap = Self::from_network(network, &bounds);
        snap.version = version;
        snap.sample_count = sample_count;
        snap.train_rmse = train_rmse;
        snap.set_target_range(target_min, target_max);
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }
}
