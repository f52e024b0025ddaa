//! Clustering, pose-correlation and invariance probes, plus CSV reports.

mod cluster;
mod probes;
mod report;

pub use cluster::{agglomerative, hungarian_accuracy, kmeans, lloyd, within_sse, ClusterResult, KMEANS_MAX_ITER, KMEANS_RESTARTS};
pub use probes::{
    align_branch, canonical_com_offsets, cosine, invariance_probe, mse, pairwise_mse, pearson, posed_recon_mse,
    posed_reconstructions, rotation_family, rotation_probe, Correlation, Histogram, ImageInvariance, InvarianceReport,
    PoseProbeReport, PosePredictor, RESIDUAL_BINS,
};
pub use report::{
    confusion_csv, embeddings_csv, histogram_csv, invariance_csv, probes_csv, summary_csv, sweep_csv,
};

use thiserror::Error;

use crate::config::RunConfig;
use crate::data::Split;
use crate::models::{Model, ModelError};
use crate::train::{train_run, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot form {k} clusters from {n} points")]
    ClusterCount { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Agglomerative and k-means clustering of the same points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub agglomerative: ClusterResult,
    pub kmeans: ClusterResult,
}

pub fn cluster_report(points: &[Vec<f64>], labels: &[u32], k: usize, seed: u64) -> Result<ClusterReport, EvalError> {
    let agg = agglomerative(points, k)?;
    let km = kmeans(points, k, seed)?;
    Ok(ClusterReport {
        agglomerative: hungarian_accuracy(&agg, labels)?,
        kmeans: hungarian_accuracy(&km, labels)?,
    })
}

/// Semantic codes of `model` for a set of images.
pub fn latent_codes(model: &Model, images: &[&crate::geometry::DiscreteImage]) -> Result<Vec<Vec<f64>>, EvalError> {
    Ok(model.encode_batch(images)?.into_iter().map(|c| c.z).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub accuracy: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

/// Trains one model per latent size and seed and scores agglomerative
/// clustering of test-set codes. Rows come back sorted by `d`.
pub fn latent_sweep(
    dims: &[usize],
    base: &RunConfig,
    seeds: &[u64],
    mut on_run: impl FnMut(usize, u64, f64),
) -> Result<Vec<SweepRow>, EvalError> {
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    let mut rows = Vec::with_capacity(dims.len());
    for &d in &dims {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.latent_dim = d;
            cfg.validate().map_err(|e| EvalError::Shape(e.to_string()))?;
            let ds = cfg.build_dataset()?;
            let train = ds.subset(Split::Train);
            let test = ds.subset(Split::Test);
            let mut trainer = Trainer::new(&cfg)?;
            let imgs: Vec<_> = train.images.iter().collect();
            train_run(&cfg, &mut trainer, &imgs, None, |_| {})?;
            let test_imgs: Vec<_> = test.images.iter().collect();
            let z = latent_codes(&trainer.model, &test_imgs)?;
            let acc = hungarian_accuracy(&agglomerative(&z, test.n_classes)?, &test.labels)?.accuracy;
            on_run(d, seed, acc);
            runs.push(acc);
        }
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        rows.push(SweepRow {
            latent_dim: d,
            accuracy: mean,
            std: var.sqrt(),
            runs,
        });
    }
    Ok(rows)
}
