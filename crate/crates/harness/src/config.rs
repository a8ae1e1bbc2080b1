//! Experiment configuration: one JSON document, optionally patched by
//! `path.to.field=value` overrides.

use std::path::{Path, PathBuf};

use dpscale_core::dp::{DpSgdConfig, LrSchedule, ScheduleShape};
use dpscale_core::models::{Activation, FreezePlan, Norm};
use dpscale_core::DType;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Logistic,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    SimpleVgg {
        arch: String,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        norm: Norm,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    GaussianMixture {
        n: usize,
        d: usize,
        classes: usize,
        separation: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    SynthImages {
        n: usize,
        shape: [usize; 3],
        classes: usize,
        noise: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    /// CIFAR-10 binary batches under the dataset root.
    Cifar10 {
        /// Use only the first `train_subset` training examples.
        #[serde(default)]
        train_subset: Option<usize>,
    },
    /// MNIST IDX files under the dataset root.
    Mnist {
        #[serde(default)]
        train_subset: Option<usize>,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Poisson,
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub delta: f64,
    /// When set, the noise multiplier is solved for and `optimizer.noise_multiplier` must be 0.
    #[serde(default)]
    pub target_epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub clip_norms: Vec<f64>,
    #[serde(default)]
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub epochs: Vec<f64>,
    /// Non-private reference learning rate; swept over `learning_rates` when absent.
    #[serde(default)]
    pub reference_lr: Option<f64>,
    /// Accuracy points a clipped run may lose against the unclipped one.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "one")]
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            learning_rates: Vec::new(),
            clip_norms: Vec::new(),
            batch_sizes: Vec::new(),
            epochs: Vec::new(),
            reference_lr: None,
            tolerance: default_tolerance(),
            refine: false,
            workers: 1,
        }
    }
}

fn default_tolerance() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Fraction of the training set treated as public.
    pub public_fraction: f64,
    pub pretrain_epochs: f64,
    pub pretrain_lr: f64,
    #[serde(default)]
    pub pretrain_batch_size: Option<usize>,
    /// Also train from scratch on the private split with the same budget.
    #[serde(default = "yes")]
    pub compare_scratch: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub optimizer: DpSgdConfig,
    pub privacy: PrivacyConfig,
    pub epochs: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub freeze: FreezePlan,
    #[serde(default = "f64_dtype")]
    pub dtype: DType,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub finetune: Option<FinetuneConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

fn f64_dtype() -> DType {
    DType::F64
}

fn default_eval_batch() -> usize {
    500
}

/// Warmup used when a config leaves it unspecified: one epoch for runs of
/// at most ten epochs, five otherwise.
pub fn default_warmup(epochs: f64) -> f64 {
    if epochs <= 10.0 {
        1.0
    } else {
        5.0
    }
}

impl ExperimentConfig {
    /// A small private logistic-regression run on synthetic data.
    pub fn example() -> Self {
        ExperimentConfig {
            name: "example".into(),
            model: ModelConfig::Logistic,
            data: DataConfig::GaussianMixture {
                n: 10_000,
                d: 20,
                classes: 2,
                separation: 10.0,
                test_fraction: 0.2,
                seed: 0,
            },
            optimizer: DpSgdConfig {
                clip_norm: Some(1.0),
                noise_multiplier: 0.0,
                shards: 1,
                batch_size: 256,
                virtual_steps: 1,
                schedule: LrSchedule {
                    max_lr: 0.5,
                    warmup_epochs: 1.0,
                    total_epochs: 5.0,
                    shape: ScheduleShape::Cosine,
                },
                momentum: 0.9,
                weight_decay: 0.0,
                weight_decay_mode: dpscale_core::dp::WeightDecayMode::PostClip,
                clip_method: Default::default(),
                parallel_shards: false,
                seed: 0,
            },
            privacy: PrivacyConfig {
                delta: 1e-6,
                target_epsilon: Some(10.0),
            },
            epochs: 5.0,
            sampling: Sampling::Poisson,
            freeze: FreezePlan::default(),
            dtype: DType::F64,
            eval_batch: 500,
            sweep: None,
            finetune: None,
            output_dir: None,
            seed: 0,
        }
    }

    /// Reads a config file, or the config snapshot inside a `run.json` record.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)?;
        // A run record embeds the config it was produced from.
        if value.get("schema_version").is_some() {
            if let Some(config) = value.get_mut("config") {
                value = config.take();
            }
        }
        Self::from_value(value, overrides)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
        cfg.optimizer.schedule.total_epochs = cfg.epochs;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the run length; the learning-rate schedule always spans the whole run.
    pub fn with_epochs(mut self, epochs: f64) -> Self {
        self.epochs = epochs;
        self.optimizer.schedule.total_epochs = epochs;
        self
    }

    /// Turns off clipping and noise.
    pub fn non_private(mut self) -> Self {
        self.optimizer.clip_norm = None;
        self.optimizer.noise_multiplier = 0.0;
        self.privacy.target_epsilon = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.epochs > 0.0) {
            return Err(Error::Config(format!("epochs must be positive, got {}", self.epochs)));
        }
        if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.privacy.delta)));
        }
        if let Some(e) = self.privacy.target_epsilon {
            if self.optimizer.noise_multiplier != 0.0 {
                return Err(Error::Config(
                    "give either optimizer.noise_multiplier or privacy.target_epsilon, not both".into(),
                ));
            }
            if !(e > 0.0) {
                return Err(Error::Config(format!("target epsilon must be positive, got {e}")));
            }
            if self.optimizer.clip_norm.is_none() {
                return Err(Error::Config("a privacy target requires optimizer.clip_norm".into()));
            }
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be positive".into()));
        }
        if let Some(s) = &self.sweep {
            if s.workers == 0 {
                return Err(Error::Config("sweep.workers must be positive".into()));
            }
        }
        Ok(())
    }

    /// Whether the run adds noise (and therefore reports a privacy guarantee).
    pub fn is_private(&self) -> bool {
        self.privacy.target_epsilon.is_some() || self.optimizer.noise_multiplier > 0.0
    }
}

/// Applies `a.b.c=value`, where `value` is parsed as JSON when possible and
/// taken as a string otherwise. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form path=value")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("empty segment in override path `{path}`")));
        }
        if !cur.is_object() {
            return Err(Error::Config(format!("`{}` is not an object", parts[..i].join("."))));
        }
        let map = cur.as_object_mut().expect("checked object");
        if i + 1 == parts.len() {
            map.insert(key.to_string(), new);
            return Ok(());
        }
        cur = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}
