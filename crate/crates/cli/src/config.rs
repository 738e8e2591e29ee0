//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pacsnoc::controller::{Arch, RenShape};
use pacsnoc::cost::{default_gamma, CostKind, CostSpec};
use pacsnoc::pac::bounds::lambda_star;
use pacsnoc::pac::gibbs::Task;
use pacsnoc::pac::prior::{Marginal, Prior};
use pacsnoc::sim::{NoiseDistribution, Plant};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Number of training sequences.
    pub s: usize,
    /// Horizon `T`; sequences have `T + 1` entries.
    pub horizon: usize,
    pub delta: f64,
    #[serde(default)]
    pub lambda: LambdaSetting,
    pub plant: Plant,
    pub noise: NoiseDistribution,
    pub cost: CostConfig,
    pub controller: ControllerConfig,
    pub prior: PriorConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub two_stage: TwoStageConfig,
    #[serde(default = "default_n_p")]
    pub n_p: usize,
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Dataset sizes for a bound sweep over prefixes; empty means just `s`.
    #[serde(default)]
    pub sweep: Vec<usize>,
}

fn default_n_p() -> usize {
    100_000
}
fn default_n_q() -> usize {
    10
}
fn default_n_test() -> usize {
    500
}
fn default_resamples() -> usize {
    50
}

/// `lambda = "lambda_star"` or a positive number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Named(LambdaName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaName {
    #[serde(rename = "lambda_star")]
    LambdaStar,
}

impl Default for LambdaSetting {
    fn default() -> Self {
        LambdaSetting::Named(LambdaName::LambdaStar)
    }
}

impl LambdaSetting {
    pub fn resolve(&self, s: usize, delta: f64, c: f64) -> Result<f64, CliError> {
        match *self {
            LambdaSetting::Value(v) if v >= 0.0 && v.is_finite() => Ok(v),
            LambdaSetting::Value(v) => Err(CliError::Config(format!("lambda must be nonnegative, got {v}"))),
            LambdaSetting::Named(_) => Ok(lambda_star(s, delta, c)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    #[serde(flatten)]
    pub kind: CostKind,
    #[serde(default = "one")]
    pub bound: f64,
    /// Defaults to the cost of the zero-noise, zero-input rollout.
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Affine,
    ImcRen { xi: usize, zeta: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    /// `N(0, variance·I)` in the controller's parameter dimension.
    ZeroMean { variance: f64 },
    GaussianIso { mean: Vec<f64>, variance: f64 },
    Product2d { k: Marginal, beta: Marginal },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Empirical,
    Grid {
        #[serde(default = "default_resolution")]
        resolution: usize,
        #[serde(default = "default_n_std")]
        n_std: f64,
    },
    Svgd {
        #[serde(default = "default_particles")]
        particles: usize,
    },
    Flows {
        #[serde(default = "default_layers")]
        layers: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_n_mc")]
        n_mc: usize,
        #[serde(default = "default_flow_steps")]
        steps: usize,
        #[serde(default = "default_flow_lr")]
        learning_rate: f64,
        #[serde(default = "default_base_runs")]
        base_runs: usize,
    },
}

fn default_resolution() -> usize {
    120
}
fn default_n_std() -> f64 {
    3.0
}
fn default_particles() -> usize {
    1
}
fn default_layers() -> usize {
    16
}
fn default_scale() -> f64 {
    4.0
}
fn default_n_mc() -> usize {
    8
}
fn default_flow_steps() -> usize {
    200
}
fn default_flow_lr() -> f64 {
    1e-3
}
fn default_base_runs() -> usize {
    5
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Empirical => "empirical",
            MethodConfig::Grid { .. } => "grid",
            MethodConfig::Svgd { .. } => "svgd",
            MethodConfig::Flows { .. } => "flows",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub val_fraction: f64,
    /// Standard deviation of the Gaussian parameter initialization.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.01,
            patience: 500,
            val_fraction: 0.25,
            init_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStageConfig {
    /// Fixed stage-1 size; when absent every split is a candidate.
    pub s1: Option<usize>,
    /// Candidates fully evaluated after ranking.
    pub top: usize,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self { s1: None, top: 3 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&raw)
    }

    pub fn from_toml(raw: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(raw).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CliError::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.s == 0 || self.horizon == 0 {
            return Err(CliError::Config("s and horizon must be positive".into()));
        }
        if self.n_q == 0 || self.n_p == 0 || self.n_test == 0 {
            return Err(CliError::Config("n_p, n_q and n_test must be positive".into()));
        }
        self.plant.validate().map_err(config_err)?;
        self.noise.validate().map_err(config_err)?;
        self.task()?;
        let prior = self.prior()?;
        prior.validate().map_err(config_err)?;
        if matches!(self.method, MethodConfig::Grid { .. }) && !matches!(prior, Prior::Product2d { .. }) {
            return Err(CliError::Config("the grid method needs a product2d prior".into()));
        }
        if let Some(s1) = self.two_stage.s1 {
            if s1 == 0 || s1 >= self.s {
                return Err(CliError::Config(format!("two_stage.s1 must lie in 1..{}", self.s)));
            }
        }
        if self.sweep.iter().any(|&n| n == 0 || n > self.s) {
            return Err(CliError::Config(format!("sweep sizes must lie in 1..={}", self.s)));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        match self.controller {
            ControllerConfig::Affine => Arch::Affine,
            ControllerConfig::ImcRen { xi, zeta } => Arch::ImcRen(RenShape::for_plant(&self.plant, xi, zeta)),
        }
    }

    pub fn task(&self) -> Result<Task, CliError> {
        let gamma = match self.cost.gamma {
            Some(g) => g,
            None => default_gamma(&self.cost.kind, &self.plant, self.horizon).map_err(config_err)?,
        };
        let spec = CostSpec {
            kind: self.cost.kind.clone(),
            bound: self.cost.bound,
            gamma,
        };
        spec.validate(&self.plant).map_err(config_err)?;
        Task::new(self.plant.clone(), spec, self.arch()).map_err(config_err)
    }

    pub fn prior(&self) -> Result<Prior, CliError> {
        let dim = self.arch().num_params();
        let prior = match &self.prior {
            PriorConfig::ZeroMean { variance } => Prior::zero_mean(dim, *variance),
            PriorConfig::GaussianIso { mean, variance } => Prior::GaussianIso {
                mean: mean.clone(),
                variance: *variance,
            },
            PriorConfig::Product2d { k, beta } => Prior::Product2d {
                k: k.clone(),
                beta: beta.clone(),
            },
        };
        let pdim = match &prior {
            Prior::GaussianIso { mean, .. } => mean.len(),
            Prior::Product2d { .. } => 2,
        };
        if pdim != dim {
            return Err(CliError::Config(format!(
                "prior dimension {pdim} does not match the controller's {dim} parameters"
            )));
        }
        Ok(prior)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join("dataset.json")
    }
}

fn config_err(e: pacsnoc::Error) -> CliError {
    CliError::Config(e.to_string())
}
