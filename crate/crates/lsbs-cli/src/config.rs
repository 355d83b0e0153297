//! Flat key-value experiment configuration.
//!
//! Config files hold one `key = value` pair per line with `#` comments.
//! Command-line flags override file values, which override built-in
//! defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lsbs::error::{Error, Result};

/// All tunables a command can pick up from a config file or flags.
#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub scheme: Option<String>,
    pub epsilon: Option<f64>,
    pub radius: Option<usize>,
    /// Dependency-set family: `stencil`, `temporal`, `closure`, or `full`.
    pub sets: Option<String>,
    /// Block size for the temporal family.
    pub s: Option<usize>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub n_c: Option<usize>,
    pub seed: Option<u64>,
    pub sinkhorn_tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// `restart` (one chain per sample) or `long_chain` (thinned chain).
    pub mode: Option<String>,
    pub d: Option<usize>,
    pub length: Option<f64>,
    pub bins: Option<usize>,
    pub tau_max: Option<usize>,
    pub dt: Option<f64>,
    pub n_steps: Option<usize>,
    pub use_closure: Option<bool>,
    pub forcing: Option<f64>,
    /// `auto` (sidecar scales when present), `unit`, or comma-separated
    /// per-coordinate divisors.
    pub metric: Option<String>,
    pub spin_up: Option<usize>,
    pub csv: Option<bool>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Parameter(format!("config key '{key}': cannot parse '{value}' as {what}"))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parameter(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut config = Self::default();
        for (key, value) in pairs {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = Some(value.to_string()),
            "scheme" => self.scheme = Some(value.to_string()),
            "epsilon" => self.epsilon = Some(value.parse().map_err(|_| bad(key, value, "a real"))?),
            "radius" => self.radius = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "sets" => self.sets = Some(value.to_string()),
            "s" => self.s = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "m" => self.m = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "n" => self.n = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "n_c" => self.n_c = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "seed" => self.seed = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "sinkhorn_tol" => {
                self.sinkhorn_tol = Some(value.parse().map_err(|_| bad(key, value, "a real"))?)
            }
            "max_iter" => self.max_iter = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "mode" => self.mode = Some(value.to_string()),
            "d" => self.d = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "length" => self.length = Some(value.parse().map_err(|_| bad(key, value, "a real"))?),
            "bins" => self.bins = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "tau_max" => self.tau_max = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "dt" => self.dt = Some(value.parse().map_err(|_| bad(key, value, "a real"))?),
            "n_steps" => self.n_steps = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "use_closure" => {
                self.use_closure = Some(value.parse().map_err(|_| bad(key, value, "a boolean"))?)
            }
            "forcing" => self.forcing = Some(value.parse().map_err(|_| bad(key, value, "a real"))?),
            "metric" => self.metric = Some(value.to_string()),
            "spin_up" => self.spin_up = Some(value.parse().map_err(|_| bad(key, value, "an integer"))?),
            "csv" => self.csv = Some(value.parse().map_err(|_| bad(key, value, "a boolean"))?),
            "data" => self.data = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Parameter(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Overlays `other` (typically CLI flags) on top of `self`.
    pub fn overlay(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if other.$field.is_some() { self.$field = other.$field; })*
            };
        }
        take!(
            experiment, scheme, epsilon, radius, sets, s, m, n, n_c, seed, sinkhorn_tol,
            max_iter, mode, d, length, bins, tau_max, dt, n_steps, use_closure, forcing,
            metric, spin_up, csv, data, model, out
        );
        self
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Parameter("missing output path (--out or 'out = ...')".into()))
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Parameter("missing dataset path (--data or 'data = ...')".into()))
    }

    pub fn require_model(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Parameter("missing model path (--model or 'model = ...')".into()))
    }
}
