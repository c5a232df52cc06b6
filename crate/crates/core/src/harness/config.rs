use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::inference::{Damping, NudgeConfig, Schedule, Scheme, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::learning::{LossKind, MetricToggles, OptimizerKind, TrainConfig};
use crate::model::{mlp_specs, parse_widths, ActivationKind, BiasMode, LayerSpec};

/// Environment variable holding the default dataset root.
pub const DATA_ENV: &str = "DUALPROP_DATA";

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory with the four MNIST IDX files.
    Mnist(PathBuf),
    Blobs(BlobSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 3,
            dim: 2,
            n_per_class: 200,
            separation: 4.0,
        }
    }
}

impl FromStr for DataSource {
    type Err = String;

    /// `mnist`, `mnist:<dir>` or `blobs[:classes=3,dim=2,n=200,sep=4]`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "mnist" if rest.is_empty() => match std::env::var_os(DATA_ENV) {
                Some(root) => Ok(DataSource::Mnist(PathBuf::from(root))),
                None => Err(format!("`mnist` without a directory needs {DATA_ENV}")),
            },
            "mnist" => Ok(DataSource::Mnist(PathBuf::from(rest))),
            "blobs" => {
                let mut spec = BlobSpec::default();
                for kv in rest.split(',').filter(|t| !t.is_empty()) {
                    let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad blob option `{kv}`"))?;
                    let int = || v.parse::<usize>().map_err(|_| format!("bad value in `{kv}`"));
                    match k {
                        "classes" => spec.classes = int()?,
                        "dim" => spec.dim = int()?,
                        "n" => spec.n_per_class = int()?,
                        "sep" => spec.separation = v.parse().map_err(|_| format!("bad value in `{kv}`"))?,
                        _ => return Err(format!("unknown blob option `{k}`")),
                    }
                }
                Ok(DataSource::Blobs(spec))
            }
            _ => Err(format!("unknown data source `{s}` (expected mnist:<dir> or blobs:<spec>)")),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Mnist(p) => write!(f, "mnist:{}", p.display()),
            DataSource::Blobs(b) => write!(
                f,
                "blobs:classes={},dim={},n={},sep={}",
                b.classes, b.dim, b.n_per_class, b.separation
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

impl FromStr for OptimizerName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerName::Adam),
            "sgd" => Ok(OptimizerName::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (expected adam or sgd)")),
        }
    }
}

/// One training run, stored as TOML. Every field has a default; CLI flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub alpha: f64,
    pub beta: f64,
    pub schedule: Schedule,
    /// Explicit damping for the stabilized scheme; power iteration if unset.
    pub damping: Option<f64>,
    pub power_iterations: usize,
    pub divergence_threshold: f64,
    /// Layer widths, e.g. `784-256-256-10`.
    pub arch: String,
    /// Hidden activation; the output layer is always linear.
    pub activation: ActivationKind,
    pub bias: bool,
    pub loss: LossKind,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `mnist:<dir>` or `blobs:<spec>`.
    pub data: String,
    /// Use only the first N training samples.
    pub subset: Option<usize>,
    pub validation_fraction: f64,
    pub grad_angle_every: usize,
    pub lipschitz_every_epoch: bool,
    pub monitor_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::Dpt,
            alpha: 0.5,
            beta: 0.5,
            schedule: Schedule::SingleSweep,
            damping: None,
            power_iterations: 5,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            arch: "784-256-256-10".into(),
            activation: ActivationKind::Relu,
            bias: false,
            loss: LossKind::LeastSquares,
            optimizer: OptimizerName::Adam,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 3,
            batch_size: 100,
            seed: 0,
            data: "mnist".into(),
            subset: None,
            validation_fraction: 0.1,
            grad_angle_every: 0,
            lipschitz_every_epoch: false,
            monitor_size: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn widths(&self) -> Result<Vec<usize>, HarnessError> {
        Ok(parse_widths(&self.arch)?)
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, HarnessError> {
        Ok(mlp_specs(&self.widths()?, self.activation)?)
    }

    pub fn bias_mode(&self) -> BiasMode {
        if self.bias {
            BiasMode::Augmented
        } else {
            BiasMode::Off
        }
    }

    pub fn data_source(&self) -> Result<DataSource, HarnessError> {
        self.data.parse().map_err(HarnessError::Config)
    }

    pub fn nudge(&self) -> NudgeConfig {
        let damping = match self.damping {
            Some(l) => Damping::Explicit(l),
            None => Damping::AutoPowerIter {
                steps: self.power_iterations,
            },
        };
        let mut cfg = NudgeConfig::new(self.scheme, self.alpha, self.beta)
            .with_schedule(self.schedule)
            .with_damping(damping);
        cfg.divergence_threshold = self.divergence_threshold;
        cfg
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerName::Adam => OptimizerKind::Adam { lr: self.lr },
            OptimizerName::Sgd => OptimizerKind::Sgd {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            nudge: self.nudge(),
            loss: self.loss,
            optimizer: self.optimizer_kind(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            metrics: MetricToggles {
                grad_angle_every: self.grad_angle_every,
                lipschitz_every_epoch: self.lipschitz_every_epoch,
                monitor_size: self.monitor_size,
            },
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let depth = self.layer_specs()?.len();
        self.nudge()
            .validate(depth, self.loss)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(HarnessError::Config(format!("lr {} must be ≥ 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(HarnessError::Config("validation_fraction must be in [0, 1)".into()));
        }
        self.data_source()?;
        Ok(())
    }
}
