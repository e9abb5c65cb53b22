use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{load_cifar10, make_synthetic_split, Dataset};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_KNN_TEMPERATURE;
use crate::losses::{LossWeights, Objective};
use crate::model::{EncoderConfig, ModelConfig, ProjectorConfig};
use crate::trainloop::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

/// Everything a pretraining run depends on. Unknown keys are rejected.
///
/// The defaults target the synthetic dataset, whose samples are flat vectors
/// with no spatial structure, so cropping is off (`aug_crop_scale_min = 1`).
/// Image runs should lower it; see `examples/configs/cifar10.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub max_per_class: Option<usize>,

    pub synthetic_classes: usize,
    pub synthetic_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_dim: usize,
    pub synthetic_separation: f64,

    pub hidden_dims: Vec<usize>,
    pub projector_hidden: usize,
    pub d: usize,

    pub objective: Objective,
    pub lambda_bt: f64,
    pub lambda_reg: f64,
    pub alpha: f64,
    pub tau: f64,

    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,

    pub eval_every: usize,
    pub knn_k: Option<usize>,
    pub knn_temp: f64,

    pub aug_crop_scale_min: f64,
    pub aug_crop_scale_max: f64,
    pub aug_flip_prob: f64,
    pub aug_jitter_prob: f64,
    pub aug_gain_min: f64,
    pub aug_gain_max: f64,
    pub aug_shift_min: f64,
    pub aug_shift_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        RunConfig {
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            max_per_class: None,
            synthetic_classes: 2,
            synthetic_per_class: 500,
            synthetic_test_per_class: 100,
            synthetic_dim: 64,
            synthetic_separation: 10.0,
            hidden_dims: vec![256, 128],
            projector_hidden: 256,
            d: 64,
            objective: Objective::Mixbt,
            lambda_bt: 0.0078125,
            lambda_reg: 0.03125,
            alpha: 1.0,
            tau: 0.5,
            batch_size: 256,
            epochs: 100,
            warmup_epochs: 10,
            base_lr: 0.01,
            weight_decay: 1e-6,
            seed: 0,
            eval_every: 5,
            knn_k: None,
            knn_temp: DEFAULT_KNN_TEMPERATURE,
            aug_crop_scale_min: 1.0,
            aug_crop_scale_max: aug.crop_scale_max,
            aug_flip_prob: aug.flip_prob,
            aug_jitter_prob: aug.jitter_prob,
            aug_gain_min: aug.gain_min,
            aug_gain_max: aug.gain_max,
            aug_shift_min: aug.shift_min,
            aug_shift_max: aug.shift_max,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop_scale_min: self.aug_crop_scale_min,
            crop_scale_max: self.aug_crop_scale_max,
            flip_prob: self.aug_flip_prob,
            jitter_prob: self.aug_jitter_prob,
            gain_min: self.aug_gain_min,
            gain_max: self.aug_gain_max,
            shift_min: self.aug_shift_min,
            shift_max: self.aug_shift_max,
        }
    }

    pub fn set_augment(&mut self, aug: &AugmentConfig) {
        self.aug_crop_scale_min = aug.crop_scale_min;
        self.aug_crop_scale_max = aug.crop_scale_max;
        self.aug_flip_prob = aug.flip_prob;
        self.aug_jitter_prob = aug.jitter_prob;
        self.aug_gain_min = aug.gain_min;
        self.aug_gain_max = aug.gain_max;
        self.aug_shift_min = aug.shift_min;
        self.aug_shift_max = aug.shift_max;
    }

    /// Loss weights actually used; `lambda_reg` only applies to `mixbt`.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_bt: self.lambda_bt,
            lambda_reg: if self.objective == Objective::Mixbt { self.lambda_reg } else { 0.0 },
            tau: self.tau,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim,
                hidden_dims: self.hidden_dims.clone(),
            },
            projector: ProjectorConfig {
                hidden_dim: self.projector_hidden,
                output_dim: self.d,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.knn_temp > 0.0) {
            return Err(Error::Config(format!("knn_temp must be > 0, got {}", self.knn_temp)));
        }
        if self.knn_k == Some(0) {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if self.dataset == DatasetKind::Cifar10 && self.data_dir.is_none() {
            return Err(Error::Config("dataset = \"cifar10\" needs data_dir".into()));
        }
        LossWeights {
            lambda_reg: self.lambda_reg,
            ..self.loss_weights()
        }
        .validate()?;
        self.schedule().validate()?;
        self.augment().validate()?;
        self.model_config(1).validate()
    }

    /// Train and test splits named by the config.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DatasetKind::Synthetic => {
                let (train, test) = make_synthetic_split(
                    self.synthetic_classes,
                    self.synthetic_per_class,
                    self.synthetic_test_per_class,
                    self.synthetic_dim,
                    self.synthetic_separation,
                    self.seed,
                )?;
                match self.max_per_class {
                    Some(cap) => Ok((cap_per_class(&train, cap)?, cap_per_class(&test, cap)?)),
                    None => Ok((train, test)),
                }
            }
            DatasetKind::Cifar10 => {
                let dir = self.data_dir.as_ref().expect("validated");
                load_cifar10(dir, self.max_per_class)
            }
        }
    }
}

fn cap_per_class(ds: &Dataset, cap: usize) -> Result<Dataset> {
    let mut seen = vec![0usize; ds.meta.class_count];
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            let c = &mut seen[ds.labels[i]];
            *c += 1;
            *c <= cap
        })
        .collect();
    ds.subset(&idx)
}
