//! Minibatch training of the full objective with Adam.
//!
//! Every random draw is keyed on `(seed, epoch, image index)`, and each
//! batch is split into fixed shards whose gradients are summed in shard
//! order, so a run is a pure function of its configuration.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AdamState, AutodiffError, Tape};
use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::config::{LossConfig, OptimizerConfig, RunConfig};
use crate::data::{stream_rng, stream_seed};
use crate::geometry::{DiscreteImage, Pose};
use crate::io::write_atomic;
use crate::losses::{total_loss, LossError};
use crate::models::{Model, ModelError};

const PURPOSE_INIT: u64 = 10;
const PURPOSE_SHUFFLE: u64 = 11;
const PURPOSE_AUG: u64 = 12;

/// Gradient and (recon, consis, symm) sums of one shard.
type ShardResult = Result<(Vec<f64>, [f64; 3]), TrainError>;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSSES_FILE: &str = "losses.csv";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-epoch means of each loss component (pre-update values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub recon: f64,
    pub consis: f64,
    pub symm: f64,
    pub total: f64,
}

pub fn losses_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,recon,consis,symm,total\n");
    for s in history {
        out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", s.epoch, s.recon, s.consis, s.symm, s.total));
    }
    out
}

/// Model, optimizer state and progress of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub seed: u64,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self, TrainError> {
        let model = Model::new(config.model.clone(), stream_seed(config.seed, 0, PURPOSE_INIT))?;
        let adam = AdamState::new(config.optimizer.adam(), model.params().len());
        Ok(Self {
            model,
            adam,
            seed: config.seed,
            history: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// One pass over `images` in a seeded random order.
    pub fn run_epoch(
        &mut self,
        images: &[&DiscreteImage],
        opt: &OptimizerConfig,
        loss: &LossConfig,
    ) -> Result<EpochStats, TrainError> {
        if images.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for img in images {
            self.model.check_image(img)?;
        }
        let epoch = self.history.len() as u64;
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut stream_rng(self.seed, epoch, PURPOSE_SHUFFLE));
        let aug_seed = stream_seed(self.seed, epoch, PURPOSE_AUG);
        let poses: Vec<(Pose, Pose)> = (0..images.len())
            .map(|i| loss.augmentation.sample_pair(&mut stream_rng(aug_seed, i as u64, 0)))
            .collect();

        let mut sums = [0.0; 3];
        for batch in order.chunks(opt.batch_size) {
            let terms = self.step(images, &poses, batch, opt, loss)?;
            for (s, t) in sums.iter_mut().zip(terms) {
                *s += t * batch.len() as f64;
            }
        }
        let n = images.len() as f64;
        let [recon, consis, symm] = sums.map(|s| s / n);
        let stats = EpochStats {
            epoch: self.history.len() + 1,
            recon,
            consis,
            symm,
            total: loss.weights.combine(recon, consis, symm),
        };
        if !stats.total.is_finite() {
            return Err(TrainError::Diverged { epoch: stats.epoch });
        }
        self.history.push(stats);
        Ok(stats)
    }

    /// Gradient of the batch loss and one Adam update; returns the batch
    /// means of (recon, consis, symm) before the update.
    fn step(
        &mut self,
        images: &[&DiscreteImage],
        poses: &[(Pose, Pose)],
        batch: &[usize],
        opt: &OptimizerConfig,
        loss: &LossConfig,
    ) -> Result<[f64; 3], TrainError> {
        let model = &self.model;
        let shards: Vec<&[usize]> = batch.chunks(opt.shard_size).collect();
        let results: Vec<ShardResult> = shards
            .par_iter()
            .map(|shard| {
                let imgs: Vec<&DiscreteImage> = shard.iter().map(|&i| images[i]).collect();
                let pairs: Vec<(Pose, Pose)> = shard.iter().map(|&i| poses[i]).collect();
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let terms = total_loss(
                    &mut tape,
                    model,
                    &bound,
                    &imgs,
                    &pairs,
                    &loss.weights,
                    loss.augmentation.metric,
                    batch.len(),
                )?;
                tape.backward(terms.total)?;
                let mut g = vec![0.0; model.params().len()];
                model.params().accumulate_grads(&tape, &bound, &mut g);
                Ok((g, [tape.item(terms.recon), tape.item(terms.consis), tape.item(terms.symm)]))
            })
            .collect();

        let mut grads = vec![0.0; model.params().len()];
        let mut terms = [0.0; 3];
        for r in results {
            let (g, t) = r?;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
            for (a, b) in terms.iter_mut().zip(t) {
                *a += b;
            }
        }
        self.adam.step(self.model.params_mut().values_mut(), &grads)?;
        Ok(terms)
    }
}

/// Trains until `config.optimizer.epochs` epochs are done, checkpointing
/// into `out_dir` (when given) every `checkpoint_every` epochs and at the
/// end. `losses.csv` is rewritten from the full history each time.
pub fn train_run(
    config: &RunConfig,
    trainer: &mut Trainer,
    images: &[&DiscreteImage],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(), TrainError> {
    let opt = &config.optimizer;
    while trainer.epochs_done() < opt.epochs {
        let stats = trainer.run_epoch(images, opt, &config.loss)?;
        on_epoch(&stats);
        let last = trainer.epochs_done() == opt.epochs;
        if let Some(dir) = out_dir {
            if last || trainer.epochs_done().is_multiple_of(opt.checkpoint_every) {
                write_outputs(config, trainer, dir)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        if trainer.epochs_done() == opt.epochs && !dir.join(CHECKPOINT_FILE).exists() {
            write_outputs(config, trainer, dir)?;
        }
    }
    Ok(())
}

pub fn write_outputs(config: &RunConfig, trainer: &Trainer, dir: &Path) -> Result<(), TrainError> {
    save_checkpoint(&dir.join(CHECKPOINT_FILE), config, trainer)?;
    let path = dir.join(LOSSES_FILE);
    write_atomic(&path, losses_csv(&trainer.history).as_bytes()).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
