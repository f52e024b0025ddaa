//! Labelled image sets: synthetic generation, IDX ingestion, pose
//! augmentation and the binary container.

mod container;
mod idx;
mod pnm;
mod synthetic;

pub use container::{decode_dataset, encode_dataset, load_dataset, save_dataset, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use idx::{embed_centered, load_idx, parse_idx_images, parse_idx_labels};
pub use pnm::{encode_grid, encode_pnm, write_grid, write_pnm};
pub use synthetic::{default_recipes, generate_synthetic, Primitive, ShapeRecipe, FIT_RADIUS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{transform_image, DiscreteImage, ImageError, Pose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid recipe for class {class}: {reason}")]
    Recipe { class: u32, reason: String },
    #[error("malformed {what} at byte {offset}: {reason}")]
    Format {
        what: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("corrupt container field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("unsupported container version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("inconsistent dataset: {0}")]
    Consistency(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<DiscreteImage>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
    /// Ground-truth poses, for evaluation only.
    pub poses: Option<Vec<Pose>>,
    pub splits: Vec<Split>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.first().map_or(1, |i| i.channels())
    }

    pub fn side(&self) -> usize {
        self.images.first().map_or(0, |i| i.side())
    }

    /// Lengths agree, labels are in range and all images share a shape.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.images.len();
        if self.labels.len() != n || self.splits.len() != n {
            return Err(DataError::Consistency(format!(
                "{n} images but {} labels and {} split tags",
                self.labels.len(),
                self.splits.len()
            )));
        }
        if let Some(p) = &self.poses {
            if p.len() != n {
                return Err(DataError::Consistency(format!("{n} images but {} poses", p.len())));
            }
        }
        if let Some(l) = self.labels.iter().find(|&&l| l as usize >= self.n_classes) {
            return Err(DataError::Consistency(format!("label {l} outside [0, {})", self.n_classes)));
        }
        let (c, s) = (self.channels(), self.side());
        if self.images.iter().any(|i| i.channels() != c || i.side() != s) {
            return Err(DataError::Consistency("images differ in shape".into()));
        }
        Ok(())
    }

    /// Every class appears in both the train and the test split.
    pub fn validate_splits(&self) -> Result<(), DataError> {
        for class in 0..self.n_classes as u32 {
            for split in [Split::Train, Split::Test] {
                let present = self.labels.iter().zip(&self.splits).any(|(&l, &s)| l == class && s == split);
                if !present {
                    return Err(DataError::Consistency(format!("class {class} missing from the {split:?} split")));
                }
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Copy of the images in `split`, all tagged with that split.
    pub fn subset(&self, split: Split) -> LabeledDataset {
        self.select(&self.indices(split))
    }

    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            poses: self.poses.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
        }
    }

    /// Tags the last `test_per_class` images of every class as test.
    pub fn assign_test_split(&mut self, test_per_class: usize) {
        self.splits = vec![Split::Train; self.len()];
        for class in 0..self.n_classes as u32 {
            let members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            for &i in members.iter().rev().take(test_per_class) {
                self.splits[i] = Split::Test;
            }
        }
    }
}

/// Mixes a run seed with a stream index and purpose tag into a seed for an
/// independent per-item generator, so results do not depend on iteration
/// order or sharding.
pub fn stream_seed(seed: u64, index: u64, purpose: u64) -> u64 {
    // splitmix64 finaliser over a combined key
    let mut x = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ purpose.wrapping_mul(0xd1b5_4a32_d192_ed03);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream_rng(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, index, purpose))
}

const PURPOSE_POSE: u64 = 2;

/// Distribution of dataset poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSampler {
    /// Draw the rotation uniformly from `[0, 2π)`; otherwise it is 0.
    pub rotate: bool,
    pub translation_std: f64,
    /// Each translation component is clamped to `[-clamp, clamp]`.
    pub clamp: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            rotate: true,
            translation_std: 0.2,
            clamp: 0.35,
        }
    }
}

impl PoseSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Pose {
        let theta = if self.rotate { rng.gen_range(0.0..std::f64::consts::TAU) } else { 0.0 };
        let mut tau = [0.0; 2];
        if self.translation_std > 0.0 {
            let normal = Normal::new(0.0, self.translation_std).expect("finite std");
            for t in &mut tau {
                *t = normal.sample(rng).clamp(-self.clamp, self.clamp);
            }
        }
        Pose::new(theta, tau)
    }
}

/// Replaces every image with `transform_image(pose_i, image_i)` for an IID
/// pose per image, recording the poses. Existing poses are composed.
pub fn apply_random_pose(ds: &LabeledDataset, sampler: &PoseSampler, seed: u64) -> LabeledDataset {
    let mut out = ds.clone();
    let mut poses = Vec::with_capacity(ds.len());
    for (i, img) in out.images.iter_mut().enumerate() {
        let pose = sampler.sample(&mut stream_rng(seed, i as u64, PURPOSE_POSE));
        *img = transform_image(&pose, img);
        // output(g) = original(S_old(S_new(g)))
        let total = match &ds.poses {
            Some(old) => pose.then(&old[i]),
            None => pose,
        };
        poses.push(total);
    }
    out.poses = Some(poses);
    out
}
