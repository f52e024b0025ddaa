use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::data::stream_rng;
use crate::geometry::{center_of_mass, push_image, rotate_image, wrap_angle, DiscreteImage, Pose};
use crate::losses::AugmentationSpec;
use crate::models::{LatentCode, Model};

/// Pearson coefficient; `degenerate` marks a zero-variance input, in which
/// case `r` is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len().min(y.len());
    if n < 2 {
        return Correlation { r: 0.0, degenerate: true };
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Correlation { r: 0.0, degenerate: true };
    }
    Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Moves `delta` by a multiple of 2π onto the branch nearest `theta`.
pub fn align_branch(delta: f64, theta: f64) -> f64 {
    delta + TAU * ((theta - delta) / TAU).round()
}

/// Fixed-width histogram over `[lo, hi)`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            if v >= lo && v <= hi {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }
}

pub const RESIDUAL_BINS: usize = 36;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseProbeReport {
    pub rotation: Correlation,
    /// Per-axis correlation of `τ̂` with the ground-truth translation.
    pub translation: Option<[Correlation; 2]>,
    /// Aligned residuals `Δ − θ`, each in `[−π, π]`.
    pub residuals: Vec<f64>,
    pub histogram: Histogram,
    /// `(image index, θ, aligned Δ)` per probe.
    pub probes: Vec<(usize, f64, f64)>,
}

/// Rotation predictor used by the probe; lets tests substitute stubs.
pub trait PosePredictor: Sync {
    fn predict(&self, images: &[&DiscreteImage]) -> Result<Vec<LatentCode>, EvalError>;
}

impl PosePredictor for Model {
    fn predict(&self, images: &[&DiscreteImage]) -> Result<Vec<LatentCode>, EvalError> {
        Ok(self.encode_batch(images)?)
    }
}

/// Pairs a random rotation `θ` of a random image with the predicted
/// offset `Δ = θ̂(J) − θ̂(R_θ J)`, aligns `Δ` to the branch of `θ` and
/// correlates the pairs. With ground-truth poses, also correlates `τ̂` of
/// every image with the true translation per axis.
pub fn rotation_probe<P: PosePredictor>(
    model: &P,
    images: &[&DiscreteImage],
    poses: Option<&[Pose]>,
    n_probes: usize,
    seed: u64,
) -> Result<PoseProbeReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Shape("no images to probe".into()));
    }
    let base = model.predict(images)?;
    let mut rng = stream_rng(seed, 0, 0);
    let draws: Vec<(usize, f64)> = (0..n_probes)
        .map(|_| (rng.gen_range(0..images.len()), rng.gen_range(0.0..TAU)))
        .collect();
    let rotated: Vec<DiscreteImage> = draws.par_iter().map(|&(i, t)| rotate_image(t, images[i])).collect();
    let refs: Vec<&DiscreteImage> = rotated.iter().collect();
    let codes = model.predict(&refs)?;

    let mut probes = Vec::with_capacity(n_probes);
    for (&(i, theta), code) in draws.iter().zip(&codes) {
        let delta = wrap_angle(base[i].theta_hat - code.theta_hat);
        probes.push((i, theta, align_branch(delta, theta)));
    }
    let thetas: Vec<f64> = probes.iter().map(|p| p.1).collect();
    let deltas: Vec<f64> = probes.iter().map(|p| p.2).collect();
    let residuals: Vec<f64> = probes.iter().map(|p| p.2 - p.1).collect();

    let translation = match poses {
        Some(p) if p.len() == images.len() => {
            let axis = |k: usize| {
                let truth: Vec<f64> = p.iter().map(|q| q.tau[k]).collect();
                let pred: Vec<f64> = base.iter().map(|c| c.tau_hat[k]).collect();
                pearson(&pred, &truth)
            };
            Some([axis(0), axis(1)])
        }
        Some(p) => {
            return Err(EvalError::Shape(format!("{} poses for {} images", p.len(), images.len())));
        }
        None => None,
    };
    Ok(PoseProbeReport {
        rotation: pearson(&thetas, &deltas),
        translation,
        histogram: Histogram::new(&residuals, -PI, PI, RESIDUAL_BINS),
        residuals,
        probes,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na * nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn mse(a: &DiscreteImage, b: &DiscreteImage) -> f64 {
    let pa = a.pixels();
    pa.iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInvariance {
    pub median_cos: f64,
    pub min_cos: f64,
    /// Mean pairwise pixel MSE between identity-pose renders.
    pub canonical_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub per_image: Vec<ImageInvariance>,
    /// Median over all pairwise cosine similarities of all images.
    pub median_cos: f64,
    pub min_cos: f64,
    pub mean_canonical_mse: f64,
}

/// Pairwise cosine similarity of `z` and canonical-render MSE across
/// `n_poses` random poses of each image. Poses follow `spec`.
pub fn invariance_probe(
    model: &Model,
    images: &[&DiscreteImage],
    n_poses: usize,
    spec: &AugmentationSpec,
    seed: u64,
) -> Result<InvarianceReport, EvalError> {
    if n_poses < 2 {
        return Err(EvalError::Shape("invariance needs at least two poses per image".into()));
    }
    let per_image: Vec<(ImageInvariance, Vec<f64>)> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = stream_rng(seed, i as u64, 1);
            let posed: Vec<DiscreteImage> =
                (0..n_poses).map(|_| push_image(&spec.sample_pose(&mut rng), img)).collect();
            let refs: Vec<&DiscreteImage> = posed.iter().collect();
            let codes = model.encode_batch(&refs)?;
            let renders = codes
                .iter()
                .map(|c| model.render_code(&c.z, &Pose::identity()))
                .collect::<Result<Vec<_>, _>>()?;
            let mut cos = Vec::new();
            let mut mse_sum = 0.0;
            for a in 0..n_poses {
                for b in a + 1..n_poses {
                    cos.push(cosine(&codes[a].z, &codes[b].z));
                    mse_sum += mse(&renders[a], &renders[b]);
                }
            }
            let pairs = cos.len() as f64;
            let min_cos = cos.iter().copied().fold(f64::INFINITY, f64::min);
            let stats = ImageInvariance {
                median_cos: median(&mut cos.clone()),
                min_cos,
                canonical_mse: mse_sum / pairs,
            };
            Ok((stats, cos))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut all: Vec<f64> = per_image.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    let min_cos = all.iter().copied().fold(f64::INFINITY, f64::min);
    let per_image: Vec<ImageInvariance> = per_image.into_iter().map(|(s, _)| s).collect();
    let mean_canonical_mse = per_image.iter().map(|s| s.canonical_mse).sum::<f64>() / per_image.len().max(1) as f64;
    Ok(InvarianceReport {
        median_cos: median(&mut all),
        min_cos,
        mean_canonical_mse,
        per_image,
    })
}

/// Reconstruction of each image with its own predicted pose.
pub fn posed_reconstructions(model: &Model, images: &[&DiscreteImage]) -> Result<Vec<DiscreteImage>, EvalError> {
    let codes = model.encode_batch(images)?;
    codes
        .par_iter()
        .map(|c| Ok(model.render_code(&c.z, &c.pose())?))
        .collect()
}

/// Mean pixel MSE between each image and its posed reconstruction.
pub fn posed_recon_mse(model: &Model, images: &[&DiscreteImage]) -> Result<f64, EvalError> {
    let recon = posed_reconstructions(model, images)?;
    Ok(images.iter().zip(&recon).map(|(a, b)| mse(a, b)).sum::<f64>() / images.len().max(1) as f64)
}

/// Identity-pose renders of `n` copies of `img` rotated by multiples of
/// `2π/n`.
pub fn rotation_family(model: &Model, img: &DiscreteImage, n: usize) -> Result<Vec<DiscreteImage>, EvalError> {
    let copies: Vec<DiscreteImage> = (0..n).map(|k| rotate_image(TAU * k as f64 / n as f64, img)).collect();
    let refs: Vec<&DiscreteImage> = copies.iter().collect();
    let codes = model.encode_batch(&refs)?;
    codes
        .iter()
        .map(|c| Ok(model.render_code(&c.z, &Pose::identity())?))
        .collect()
}

/// Largest and mean pairwise MSE among `renders`.
pub fn pairwise_mse(renders: &[DiscreteImage]) -> (f64, f64) {
    let (mut worst, mut sum, mut count) = (0.0f64, 0.0, 0);
    for a in 0..renders.len() {
        for b in a + 1..renders.len() {
            let m = mse(&renders[a], &renders[b]);
            worst = worst.max(m);
            sum += m;
            count += 1;
        }
    }
    (worst, if count > 0 { sum / count as f64 } else { 0.0 })
}

/// Distance from the origin of the centre of mass of each image's
/// identity-pose render (negative values clamped to 0 before the CoM).
pub fn canonical_com_offsets(model: &Model, images: &[&DiscreteImage]) -> Result<Vec<f64>, EvalError> {
    let codes = model.encode_batch(images)?;
    codes
        .par_iter()
        .map(|c| {
            let r = model.render_code(&c.z, &Pose::identity())?.clamped();
            let m = center_of_mass(&r);
            Ok(m[0].hypot(m[1]))
        })
        .collect()
}
