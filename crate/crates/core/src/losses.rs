//! Reconstruction, consistency and symmetry-breaking losses.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Value};
use crate::geometry::{center_of_mass, push_image, DiscreteImage, Pose};
use crate::models::{Model, ModelError};

/// Lower bound on the cosine denominator, guarding zero-norm codes.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss batch is empty")]
    EmptyBatch,
    #[error("expected {expected} augmentation pose pairs, got {got}")]
    PoseCount { expected: usize, got: usize },
    #[error("invalid loss settings: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub recon: f64,
    pub consis: f64,
    pub symm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            consis: 1.0,
            symm: 15.0,
        }
    }
}

impl LossWeights {
    /// Weights must be finite and non-negative; zero switches a term off.
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, w) in [("recon", self.recon), ("consis", self.consis), ("symm", self.symm)] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::Config(format!("weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, recon: f64, consis: f64, symm: f64) -> f64 {
        self.recon * recon + self.consis * consis + self.symm * symm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyMetric {
    #[default]
    Cosine,
    Mse,
}

/// Pose sampler for the consistency loss: rotation uniform on `[0, 2π)`,
/// translation isotropic normal with standard deviation `sigma_aug`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub sigma_aug: f64,
    pub metric: ConsistencyMetric,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            sigma_aug: 0.2,
            metric: ConsistencyMetric::Cosine,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.sigma_aug.is_finite() || self.sigma_aug < 0.0 {
            return Err(LossError::Config(format!("sigma_aug must be >= 0, got {}", self.sigma_aug)));
        }
        Ok(())
    }

    pub fn sample_pose<R: Rng>(&self, rng: &mut R) -> Pose {
        let theta = rng.gen_range(0.0..TAU);
        let normal = Normal::new(0.0, self.sigma_aug).expect("validated sigma");
        Pose::new(theta, [normal.sample(rng), normal.sample(rng)])
    }

    pub fn sample_pair<R: Rng>(&self, rng: &mut R) -> (Pose, Pose) {
        let a = self.sample_pose(rng);
        (a, self.sample_pose(rng))
    }
}

/// `(1/P) Σ_p ‖J_p − dec(S_{θ̂,τ̂}(g_p); η)‖²` for row `row` of `eta`.
///
/// `cs` is `(cos θ̂, sin θ̂)`, `tau` is `τ̂`, `grid` the `[P, 2]` grid points.
#[allow(clippy::too_many_arguments)]
pub fn recon_loss<'a>(
    tape: &mut Tape<'a>,
    model: &'a Model,
    img: &DiscreteImage,
    eta: Value,
    row: usize,
    cs: Value,
    tau: Value,
    grid: Value,
) -> Result<Value, LossError> {
    let p = img.num_pixels();
    let pts = tape.rotate_translate(cs, tau, grid)?;
    let out = model.decode_on_tape(tape, eta, row, pts)?;
    let target = tape.constant(Tensor::new(&[p, img.channels()], img.pixel_major())?);
    let diff = tape.sub(out, target)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / p as f64))
}

/// `‖m − ‖τ̂‖ (cos θ̂, −sin θ̂)‖²` with the centre of mass `m` held constant.
pub fn symmetry_loss(tape: &mut Tape<'_>, com: [f64; 2], cs: Value, tau: Value) -> Result<Value, LossError> {
    let flip = tape.constant(Tensor::vector(vec![1.0, -1.0]));
    let dir = tape.mul(cs, flip)?;
    let len = tape.norm(tau);
    let pred = tape.scale_by(dir, len)?;
    let m = tape.constant(Tensor::vector(com.to_vec()));
    let diff = tape.sub(m, pred)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// Distance between two semantic codes under the configured metric.
pub fn latent_distance(tape: &mut Tape<'_>, z1: Value, z2: Value, metric: ConsistencyMetric) -> Result<Value, LossError> {
    Ok(match metric {
        ConsistencyMetric::Cosine => {
            let dot = tape.dot(z1, z2)?;
            let n1 = tape.norm(z1);
            let n2 = tape.norm(z2);
            let mut den = tape.mul(n1, n2)?;
            if tape.item(den) < COSINE_EPS {
                den = tape.scalar(COSINE_EPS);
            }
            let cos = tape.div(dot, den)?;
            let neg = tape.scale(cos, -1.0);
            tape.offset(neg, 1.0)
        }
        ConsistencyMetric::Mse => {
            let diff = tape.sub(z1, z2)?;
            let sq = tape.square(diff);
            tape.mean(sq)
        }
    })
}

/// Encodes two posed copies of `img` and compares their semantic codes.
/// Image posing is data preparation; gradients reach only the encoder.
pub fn consistency_loss<R: Rng>(
    tape: &mut Tape<'_>,
    model: &Model,
    bound: &[Value],
    img: &DiscreteImage,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<Value, LossError> {
    let (a, b) = spec.sample_pair(rng);
    consistency_for_poses(tape, model, bound, img, &a, &b, spec.metric)
}

pub fn consistency_for_poses(
    tape: &mut Tape<'_>,
    model: &Model,
    bound: &[Value],
    img: &DiscreteImage,
    a: &Pose,
    b: &Pose,
    metric: ConsistencyMetric,
) -> Result<Value, LossError> {
    let (ia, ib) = (push_image(a, img), push_image(b, img));
    let input = tape.variable(model.encoder_input(&[&ia, &ib])?);
    let head = model.encode_on_tape(tape, bound, input)?;
    let d = model.config().latent_dim;
    let z = tape.slice_cols(head, 0, d)?;
    let z1 = tape.row(z, 0)?;
    let z2 = tape.row(z, 1)?;
    latent_distance(tape, z1, z2, metric)
}

/// Loss nodes for one batch (or shard of a batch).
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Value,
    pub recon: Value,
    pub consis: Value,
    pub symm: Value,
}

/// Weighted sum of the three losses over `batch`.
///
/// Reconstruction and symmetry use each image as given; consistency uses
/// the two augmentation poses in `poses[i]`. Each term is the sum over the
/// batch divided by `denominator`, so shards of one optimizer batch can be
/// built on separate tapes and their gradients added.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<'a>(
    tape: &mut Tape<'a>,
    model: &'a Model,
    bound: &[Value],
    batch: &[&DiscreteImage],
    poses: &[(Pose, Pose)],
    weights: &LossWeights,
    metric: ConsistencyMetric,
    denominator: usize,
) -> Result<LossTerms, LossError> {
    if batch.is_empty() || denominator == 0 {
        return Err(LossError::EmptyBatch);
    }
    if poses.len() != batch.len() {
        return Err(LossError::PoseCount {
            expected: batch.len(),
            got: poses.len(),
        });
    }
    let n = batch.len();
    let d = model.config().latent_dim;
    let w = model.config().head_dim();

    let augmented: Vec<DiscreteImage> = poses
        .iter()
        .zip(batch)
        .flat_map(|((a, b), img)| [push_image(a, img), push_image(b, img)])
        .collect();
    let mut all: Vec<&DiscreteImage> = batch.to_vec();
    all.extend(augmented.iter());
    let input = tape.variable(model.encoder_input(&all)?);
    let head = model.encode_on_tape(tape, bound, input)?;

    let plain = tape.slice(head, 0, &[n, w])?;
    let z = tape.slice_cols(plain, 0, d)?;
    let eta = model.hyper_on_tape(tape, bound, z)?;
    let grid = tape.constant_ref(model.grid().points(), &[model.grid().len(), 2])?;

    let mut recon = Vec::with_capacity(n);
    let mut symm = Vec::with_capacity(n);
    let mut consis = Vec::with_capacity(n);
    for (i, img) in batch.iter().enumerate() {
        let (cs, tau) = model.pose_on_tape(tape, head, i)?;
        recon.push(recon_loss(tape, model, img, eta, i, cs, tau, grid)?);
        symm.push(symmetry_loss(tape, center_of_mass(img), cs, tau)?);
        let base = (n + 2 * i) * w;
        let z1 = tape.slice(head, base, &[d])?;
        let z2 = tape.slice(head, base + w, &[d])?;
        consis.push(latent_distance(tape, z1, z2, metric)?);
    }
    let scale = 1.0 / denominator as f64;
    let mut mean = |xs: &[Value]| -> Result<Value, LossError> {
        let s = tape.add_n(xs)?;
        Ok(tape.scale(s, scale))
    };
    let recon = mean(&recon)?;
    let consis = mean(&consis)?;
    let symm = mean(&symm)?;
    let r = tape.scale(recon, weights.recon);
    let c = tape.scale(consis, weights.consis);
    let s = tape.scale(symm, weights.symm);
    let total = tape.add_n(&[r, c, s])?;
    Ok(LossTerms {
        total,
        recon,
        consis,
        symm,
    })
}
