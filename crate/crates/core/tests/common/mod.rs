#![allow(dead_code)]

use invariant_inr::autodiff::Tape;
use invariant_inr::geometry::{DiscreteImage, Pose};
use invariant_inr::losses::{total_loss, AugmentationSpec, ConsistencyMetric, LossWeights};
use invariant_inr::models::{ConvBlock, EncoderConfig, Model, ModelConfig, Pooling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// d = 4, f = 8, 8×8 grayscale.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 4,
        channels: 1,
        side: 8,
        encoder: EncoderConfig {
            blocks: vec![ConvBlock { channels: 4, stride: 2 }, ConvBlock { channels: 8, stride: 2 }],
            kernel: 3,
            pooling: Pooling::Flatten,
            coord_channels: true,
            head_hidden: vec![16],
        },
        hyper_hidden: vec![16, 16],
        decoder_hidden: vec![16, 16],
        fourier_features: 8,
        fourier_sigma: 2.0,
    }
}

/// A soft off-centre blob plus uniform noise, so the centre of mass is well defined.
pub fn blob_image(rng: &mut ChaCha8Rng, side: usize) -> DiscreteImage {
    let (cx, cy) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
    let grid = invariant_inr::geometry::GridSpec::new(side);
    let pixels = (0..grid.len())
        .map(|p| {
            let [x, y] = grid.point(p);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            ((-r2 / 0.1).exp() + rng.gen_range(0.0..0.1)).min(1.0)
        })
        .collect();
    DiscreteImage::new(1, side, pixels).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Recon,
    Consis,
    Symm,
    Total,
}

pub const TERMS: [Term; 4] = [Term::Recon, Term::Consis, Term::Symm, Term::Total];

pub struct Instance {
    pub model: Model,
    pub images: Vec<DiscreteImage>,
    pub poses: Vec<(Pose, Pose)>,
    pub metric: ConsistencyMetric,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(tiny_config(), seed).unwrap();
    let images: Vec<_> = (0..2).map(|_| blob_image(&mut rng, 8)).collect();
    let spec = AugmentationSpec::default();
    let poses = images.iter().map(|_| spec.sample_pair(&mut rng)).collect();
    let metric = if seed.is_multiple_of(2) { ConsistencyMetric::Cosine } else { ConsistencyMetric::Mse };
    Instance {
        model,
        images,
        poses,
        metric,
    }
}

fn build(inst: &Instance, model: &Model, term: Term, trainable: bool) -> (f64, Option<Vec<f64>>) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, trainable);
    let batch: Vec<&DiscreteImage> = inst.images.iter().collect();
    let t = total_loss(
        &mut tape,
        model,
        &bound,
        &batch,
        &inst.poses,
        &LossWeights::default(),
        inst.metric,
        batch.len(),
    )
    .unwrap();
    let v = match term {
        Term::Recon => t.recon,
        Term::Consis => t.consis,
        Term::Symm => t.symm,
        Term::Total => t.total,
    };
    let value = tape.item(v);
    if !trainable {
        return (value, None);
    }
    tape.backward(v).unwrap();
    let mut grads = vec![0.0; model.params().len()];
    model.params().accumulate_grads(&tape, &bound, &mut grads);
    (value, Some(grads))
}

pub fn loss_value(inst: &Instance, model: &Model, term: Term) -> f64 {
    build(inst, model, term, false).0
}

pub fn loss_grads(inst: &Instance, term: Term) -> Vec<f64> {
    build(inst, &inst.model, term, true).1.unwrap()
}

/// Central difference at coordinate `j` with step 1e-5. A ReLU kink inside
/// the interval makes the estimate disagree with the one at a ten times
/// smaller step; the step is then shrunk until consecutive estimates agree.
pub fn central_difference(inst: &Instance, term: Term, j: usize) -> f64 {
    let at = |delta: f64| {
        let mut m = inst.model.clone();
        m.params_mut().values_mut()[j] += delta;
        loss_value(inst, &m, term)
    };
    let central = |eps: f64| (at(eps) - at(-eps)) / (2.0 * eps);
    let mut eps = 1e-5;
    let mut current = central(eps);
    for _ in 0..3 {
        let finer = central(eps * 0.1);
        if (current - finer).abs() <= 1e-6 * current.abs().max(1e-3) {
            return current;
        }
        eps *= 0.1;
        current = finer;
    }
    current
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Worst relative error over a few coordinates of every parameter tensor.
pub fn worst_gradient_error(seed: u64, term: Term) -> f64 {
    let inst = instance(seed);
    let grads = loss_grads(&inst, term);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut worst: f64 = 0.0;
    for entry in inst.model.params().entries() {
        for _ in 0..2 {
            let j = entry.offset + rng.gen_range(0..entry.len());
            let fd = central_difference(&inst, term, j);
            worst = worst.max(relative_error(grads[j], fd));
        }
    }
    worst
}
