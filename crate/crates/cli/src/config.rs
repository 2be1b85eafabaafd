//! Experiment configuration: per-experiment defaults, a flat `key = value`
//! file, and command-line overrides (flags win over the file).

use std::fmt;
use std::path::{Path, PathBuf};

use driftflow::{GaussianSpec, ProgressionSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Linear,
    Cubic,
    QuarticCompare,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Linear => "linear",
            Experiment::Cubic => "cubic",
            Experiment::QuarticCompare => "quartic-compare",
            Experiment::Custom => "custom",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional settings, as read from a config file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(rename = "L")]
    pub particle_count: Option<usize>,
    pub y_hat: Option<f64>,
    pub noise_std: Option<f64>,
    pub prior_mean: Option<f64>,
    pub prior_std: Option<f64>,
    pub ess_floor: Option<f64>,
    pub c: Option<f64>,
    pub rbf_count: Option<usize>,
    pub min_dgamma: Option<f64>,
    pub max_substeps: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub expr: Option<String>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merged_with(self, other: Overrides) -> Overrides {
        Overrides {
            particle_count: other.particle_count.or(self.particle_count),
            y_hat: other.y_hat.or(self.y_hat),
            noise_std: other.noise_std.or(self.noise_std),
            prior_mean: other.prior_mean.or(self.prior_mean),
            prior_std: other.prior_std.or(self.prior_std),
            ess_floor: other.ess_floor.or(self.ess_floor),
            c: other.c.or(self.c),
            rbf_count: other.rbf_count.or(self.rbf_count),
            min_dgamma: other.min_dgamma.or(self.min_dgamma),
            max_substeps: other.max_substeps.or(self.max_substeps),
            max_iters: other.max_iters.or(self.max_iters),
            grad_tol: other.grad_tol.or(self.grad_tol),
            seed: other.seed.or(self.seed),
            out: other.out.or(self.out),
            expr: other.expr.or(self.expr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub particle_count: usize,
    pub y_hat: f64,
    pub noise_std: f64,
    pub prior: GaussianSpec,
    pub settings: ProgressionSettings,
    /// Base seed of the SIR baseline runs.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Log-likelihood expression in `x`, custom experiment only.
    pub expr: Option<String>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let (particle_count, noise_std) = match experiment {
            Experiment::Linear | Experiment::Custom => (30, 1.0),
            Experiment::Cubic => (50, 0.6),
            Experiment::QuarticCompare => (50, 1.0),
        };
        Self {
            experiment,
            particle_count,
            y_hat: 1.0,
            noise_std,
            prior: GaussianSpec::standard(),
            settings: ProgressionSettings::default(),
            seed: 1,
            output_dir: PathBuf::from("out").join(experiment.name()),
            expr: None,
        }
    }

    pub fn resolve(experiment: Experiment, overrides: Overrides) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(experiment);
        let o = overrides;
        if let Some(v) = o.particle_count {
            cfg.particle_count = v;
        }
        if let Some(v) = o.y_hat {
            cfg.y_hat = v;
        }
        if let Some(v) = o.noise_std {
            cfg.noise_std = v;
        }
        let mean = o.prior_mean.unwrap_or(cfg.prior.mean);
        let std = o.prior_std.unwrap_or(cfg.prior.std);
        cfg.prior = GaussianSpec::new(mean, std).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(v) = o.ess_floor {
            cfg.settings.ess_floor = v;
        }
        if let Some(v) = o.c {
            cfg.settings.cvm.mean_penalty_weight = v;
        }
        if let Some(v) = o.rbf_count {
            cfg.settings.rbf_count = v;
        }
        if let Some(v) = o.min_dgamma {
            cfg.settings.min_dgamma = v;
        }
        if let Some(v) = o.max_substeps {
            cfg.settings.max_substeps = v;
        }
        if let Some(v) = o.max_iters {
            cfg.settings.bfgs.max_iters = v;
        }
        if let Some(v) = o.grad_tol {
            cfg.settings.bfgs.grad_tol = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.out {
            cfg.output_dir = v;
        }
        cfg.expr = o.expr;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.particle_count < 2 {
            return Err(ConfigError::Invalid(format!(
                "L = {} but at least 2 particles are needed",
                self.particle_count
            )));
        }
        if !(self.noise_std > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "noise_std = {} must be positive",
                self.noise_std
            )));
        }
        if !self.y_hat.is_finite() {
            return Err(ConfigError::Invalid("y_hat must be finite".into()));
        }
        self.settings
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match (self.experiment, &self.expr) {
            (Experiment::Custom, None) => Err(ConfigError::Invalid("custom experiment needs --expr".into())),
            (Experiment::Custom, Some(_)) | (_, None) => Ok(()),
            (other, Some(_)) => Err(ConfigError::Invalid(format!(
                "--expr is only used by custom, not {other}"
            ))),
        }
    }

    /// Echo of the effective configuration for `summary.json`.
    pub fn to_record(&self) -> ConfigRecord {
        ConfigRecord {
            experiment: self.experiment,
            particle_count: self.particle_count,
            y_hat: self.y_hat,
            noise_std: self.noise_std,
            prior_mean: self.prior.mean,
            prior_std: self.prior.std,
            settings: self.settings,
            seed: self.seed,
            expr: self.expr.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigRecord {
    pub experiment: Experiment,
    #[serde(rename = "L")]
    pub particle_count: usize,
    pub y_hat: f64,
    pub noise_std: f64,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub settings: ProgressionSettings,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
}
