//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, WeightDecay};
use crate::data::{
    apply_random_pose, default_recipes, embed_centered, generate_synthetic, load_dataset, load_idx, DataError,
    LabeledDataset, PoseSampler, ShapeRecipe,
};
use crate::losses::{AugmentationSpec, LossWeights};
use crate::models::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
    Container,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Generation seed; the global seed is used when absent.
    pub seed: Option<u64>,
    pub side: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Custom class templates; the six built-in shapes when empty.
    pub recipes: Vec<ShapeRecipe>,
    /// Pose every image after generation or loading.
    pub pose_images: bool,
    pub pose: PoseSampler,
    /// Container file (source = "container").
    pub path: Option<PathBuf>,
    /// IDX image and label files (source = "idx").
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Embed IDX images centred into a frame of this side.
    pub embed_side: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            seed: None,
            side: 32,
            train_per_class: 200,
            test_per_class: 50,
            recipes: Vec::new(),
            pose_images: true,
            pose: PoseSampler::default(),
            path: None,
            idx_images: None,
            idx_labels: None,
            embed_side: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub augmentation: AugmentationSpec,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
    pub batch_size: usize,
    pub epochs: usize,
    /// Images per gradient shard; shards are summed in a fixed order.
    pub shard_size: usize,
    /// Write a checkpoint every this many epochs (and after the last).
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            decay_mode: adam.decay_mode,
            batch_size: 128,
            epochs: 30,
            shard_size: 16,
            checkpoint_every: 5,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}


impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn dataset_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss.augmentation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be positive, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optimizer betas must lie in [0, 1)".into());
        }
        if !o.eps.is_finite() || o.eps <= 0.0 || !o.weight_decay.is_finite() || o.weight_decay < 0.0 {
            return bad("optimizer eps must be positive and weight_decay non-negative".into());
        }
        if o.batch_size == 0 || o.shard_size == 0 || o.checkpoint_every == 0 {
            return bad("batch_size, shard_size and checkpoint_every must be positive".into());
        }
        let d = &self.dataset;
        if d.side == 0 {
            return bad("dataset.side must be positive".into());
        }
        if d.source == DataSource::Synthetic {
            if d.train_per_class == 0 || d.test_per_class == 0 {
                return bad("synthetic datasets need train_per_class and test_per_class >= 1".into());
            }
            if d.side != self.model.side || self.model.channels != 1 {
                return bad(format!(
                    "synthetic images are 1x{0}x{0} but the model expects {1}x{2}x{2}",
                    d.side, self.model.channels, self.model.side
                ));
            }
        }
        if d.source == DataSource::Container && d.path.is_none() {
            return bad("dataset.path is required for source = \"container\"".into());
        }
        if d.source == DataSource::Idx && (d.idx_images.is_none() || d.idx_labels.is_none()) {
            return bad("dataset.idx_images and dataset.idx_labels are required for source = \"idx\"".into());
        }
        Ok(())
    }
}

impl RunConfig {
    /// Builds the dataset described by the `[dataset]` section, with the
    /// test split assigned and poses applied.
    pub fn build_dataset(&self) -> Result<LabeledDataset, DataError> {
        let d = &self.dataset;
        let seed = self.dataset_seed();
        let mut ds = match d.source {
            DataSource::Synthetic => {
                let recipes = if d.recipes.is_empty() { default_recipes() } else { d.recipes.clone() };
                let mut ds = generate_synthetic(d.train_per_class + d.test_per_class, &recipes, d.side, seed)?;
                ds.assign_test_split(d.test_per_class);
                ds
            }
            DataSource::Container => load_dataset(d.path.as_deref().expect("validated"))?,
            DataSource::Idx => {
                let mut ds = load_idx(
                    d.idx_images.as_deref().expect("validated"),
                    d.idx_labels.as_deref().expect("validated"),
                )?;
                if let Some(side) = d.embed_side {
                    ds = embed_centered(&ds, side)?;
                }
                if d.test_per_class > 0 {
                    ds.assign_test_split(d.test_per_class);
                }
                ds
            }
        };
        if d.pose_images {
            ds = apply_random_pose(&ds, &d.pose, seed);
        }
        ds.validate()?;
        Ok(ds)
    }
}
