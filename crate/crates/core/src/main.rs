use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use invariant_inr::checkpoint::{load_checkpoint, Checkpoint, CheckpointError};
use invariant_inr::config::{ConfigError, RunConfig};
use invariant_inr::data::{load_dataset, save_dataset, write_grid, DataError, LabeledDataset, Split};
use invariant_inr::evaluation::{
    canonical_com_offsets, cluster_report, confusion_csv, embeddings_csv, histogram_csv, invariance_csv,
    invariance_probe, latent_codes, latent_sweep, pairwise_mse, posed_recon_mse, probes_csv, rotation_family,
    rotation_probe, summary_csv, sweep_csv, EvalError,
};
use invariant_inr::geometry::{rotate_image, DiscreteImage, Pose};
use invariant_inr::io::{write_atomic, DirLock};
use invariant_inr::train::{train_run, TrainError, Trainer};

#[derive(Parser)]
#[command(name = "invariant-inr", version, about = "Pose-invariant image codes from a hypernetwork INR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Clone)]
struct Source {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset container; rebuilt from the checkpoint's config when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Cluster,
    Pose,
    Invariance,
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Posed,
    Canonical,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured dataset and save it as a container.
    Generate(Common),
    /// Train a model; writes a checkpoint and per-epoch loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write the codes (z, θ̂, τ̂) of every image as CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
    },
    /// Clustering, pose, invariance or latent-size reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        which: Which,
        /// Rotation probes for `pose`.
        #[arg(long, default_value_t = 2000)]
        probes: usize,
        /// Random poses per image for `invariance`.
        #[arg(long, default_value_t = 8)]
        poses: usize,
        /// Latent sizes for `sweep`.
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 32, 128])]
        dims: Vec<usize>,
        /// Training seeds per latent size for `sweep`.
        #[arg(long, default_value_t = 3)]
        sweep_seeds: u64,
    },
    /// Emit input/output image grids as PGM/PPM.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Comma-separated image indices within the chosen split.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        indices: Vec<usize>,
        #[arg(long, value_enum, default_value = "posed")]
        mode: Mode,
        /// Also render each image rotated by multiples of 2π/N.
        #[arg(long)]
        rotations: Option<usize>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("run directory {0} is locked by another process (remove .lock if stale)")]
    Locked(String),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Locked(_) => 6,
            CliError::Train(TrainError::Checkpoint(_)) => 5,
            CliError::Io { .. } | CliError::Train(TrainError::Io { .. }) => 8,
            CliError::Train(_) | CliError::Eval(_) => 7,
            CliError::Argument(_) => 9,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, common: &Common) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write_file(&dir.join("config.toml"), &cfg.to_toml())
}

fn cmd_generate(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dir = out_dir(&cfg, common)?;
    let ds = cfg.build_dataset()?;
    save_dataset(&dir.join("dataset.bin"), &ds)?;
    echo_config(&dir, &cfg)?;
    eprintln!("wrote {} images to {}", ds.len(), dir.join("dataset.bin").display());
    Ok(())
}

/// A resumed run may only extend the schedule; everything else must match.
fn merge_resume(stored: &RunConfig, requested: Option<RunConfig>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    if seed.is_some_and(|s| s != stored.seed) {
        return Err(CliError::Argument(format!(
            "--seed {} differs from the checkpoint's seed {}",
            seed.unwrap(),
            stored.seed
        )));
    }
    let Some(req) = requested else {
        return Ok(stored.clone());
    };
    let mut cmp = stored.clone();
    cmp.optimizer.epochs = req.optimizer.epochs;
    cmp.optimizer.checkpoint_every = req.optimizer.checkpoint_every;
    cmp.out_dir = req.out_dir.clone();
    if cmp != req {
        return Err(CliError::Config(ConfigError::Invalid(
            "resume config differs from the checkpoint beyond epochs/checkpoint_every/out_dir".into(),
        )));
    }
    Ok(req)
}

fn cmd_train(common: &Common, resume: Option<&Path>) -> Result<(), CliError> {
    let (cfg, mut trainer) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let requested = common.config.as_ref().map(|_| load_config(common)).transpose()?;
            let mut cfg = merge_resume(&ck.config, requested, common.seed)?;
            if let Some(out) = &common.out {
                cfg.out_dir = Some(out.clone());
            }
            let mut trainer = ck.trainer;
            trainer.adam.config = cfg.optimizer.adam();
            (cfg, trainer)
        }
        None => {
            let cfg = load_config(common)?;
            let trainer = Trainer::new(&cfg)?;
            (cfg, trainer)
        }
    };
    let dir = out_dir(&cfg, common)?;
    let _lock = DirLock::acquire(&dir).map_err(|_| CliError::Locked(dir.display().to_string()))?;
    echo_config(&dir, &cfg)?;
    let ds = cfg.build_dataset()?;
    let train = ds.subset(Split::Train);
    let images: Vec<&DiscreteImage> = train.images.iter().collect();
    eprintln!(
        "training on {} images, {} parameters, epochs {}..{}",
        images.len(),
        trainer.model.params().len(),
        trainer.epochs_done() + 1,
        cfg.optimizer.epochs
    );
    train_run(&cfg, &mut trainer, &images, Some(&dir), |s| {
        eprintln!(
            "epoch {:>4}  total {:.6}  recon {:.6}  consis {:.6}  symm {:.6}",
            s.epoch, s.total, s.recon, s.consis, s.symm
        );
    })?;
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    data: LabeledDataset,
    /// Positions of `data` within the full dataset.
    indices: Vec<usize>,
}

fn load_source(source: &Source) -> Result<Loaded, CliError> {
    let ckpt = load_checkpoint(&source.checkpoint)?;
    let full = match &source.dataset {
        Some(p) => load_dataset(p)?,
        None => ckpt.config.build_dataset()?,
    };
    let indices = match source.split {
        SplitArg::Train => full.indices(Split::Train),
        SplitArg::Test => full.indices(Split::Test),
        SplitArg::All => (0..full.len()).collect(),
    };
    let data = full.select(&indices);
    if let Some(img) = data.images.first() {
        ckpt.trainer.model.check_image(img).map_err(EvalError::from)?;
    }
    Ok(Loaded { ckpt, data, indices })
}

fn cmd_embed(common: &Common, source: &Source) -> Result<(), CliError> {
    let l = load_source(source)?;
    let dir = out_dir(&l.ckpt.config, common)?;
    let images: Vec<&DiscreteImage> = l.data.images.iter().collect();
    let codes = l.ckpt.trainer.model.encode_batch(&images).map_err(EvalError::from)?;
    write_file(&dir.join("embeddings.csv"), &embeddings_csv(&l.indices, &l.data.labels, &codes))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &Common,
    source: &Source,
    which: Which,
    probes: usize,
    poses: usize,
    dims: &[usize],
    sweep_seeds: u64,
) -> Result<(), CliError> {
    let l = load_source(source)?;
    let cfg = &l.ckpt.config;
    let dir = out_dir(cfg, common)?;
    let model = &l.ckpt.trainer.model;
    let images: Vec<&DiscreteImage> = l.data.images.iter().collect();
    if images.is_empty() {
        return Err(CliError::Argument("the selected split is empty".into()));
    }
    let seed = common.seed.unwrap_or(cfg.seed);
    match which {
        Which::Cluster => {
            let z = latent_codes(model, &images)?;
            let k = l.data.n_classes;
            let r = cluster_report(&z, &l.data.labels, k, seed)?;
            let mut assign = String::from("index,label,agglomerative,kmeans\n");
            for (j, &i) in l.indices.iter().enumerate() {
                assign.push_str(&format!(
                    "{i},{},{},{}\n",
                    l.data.labels[j], r.agglomerative.assignments[j], r.kmeans.assignments[j]
                ));
            }
            write_file(&dir.join("cluster_assignments.csv"), &assign)?;
            write_file(&dir.join("confusion_agglomerative.csv"), &confusion_csv(&r.agglomerative))?;
            write_file(&dir.join("confusion_kmeans.csv"), &confusion_csv(&r.kmeans))?;
            let rows = vec![
                ("agglomerative_accuracy".to_string(), r.agglomerative.accuracy),
                ("kmeans_accuracy".to_string(), r.kmeans.accuracy),
            ];
            write_file(&dir.join("cluster_summary.csv"), &summary_csv(&rows))?;
            println!("agglomerative {:.4}  kmeans {:.4}", r.agglomerative.accuracy, r.kmeans.accuracy);
        }
        Which::Pose => {
            let r = rotation_probe(model, &images, l.data.poses.as_deref(), probes, seed)?;
            let mut rows = vec![
                ("rotation_r".to_string(), r.rotation.r),
                ("rotation_degenerate".to_string(), r.rotation.degenerate as u8 as f64),
            ];
            if let Some(t) = &r.translation {
                rows.push(("translation_x_r".into(), t[0].r));
                rows.push(("translation_y_r".into(), t[1].r));
            }
            write_file(&dir.join("pose_summary.csv"), &summary_csv(&rows))?;
            write_file(&dir.join("rotation_probes.csv"), &probes_csv(&r))?;
            write_file(&dir.join("rotation_residuals.csv"), &histogram_csv(&r.histogram))?;
            println!("rotation r {:.4}", r.rotation.r);
            if let Some(t) = &r.translation {
                println!("translation r x {:.4}  y {:.4}", t[0].r, t[1].r);
            }
        }
        Which::Invariance => {
            let r = invariance_probe(model, &images, poses, &cfg.loss.augmentation, seed)?;
            let floor = posed_recon_mse(model, &images)?;
            let family = rotation_family(model, images[0], 7)?;
            let (worst, _) = pairwise_mse(&family);
            let offsets = canonical_com_offsets(model, &images)?;
            let spacing = model.grid().spacing();
            let centred = offsets.iter().filter(|&&d| d <= 3.0 * spacing).count() as f64 / offsets.len() as f64;
            let rows = vec![
                ("median_cos".to_string(), r.median_cos),
                ("min_cos".to_string(), r.min_cos),
                ("mean_canonical_mse".to_string(), r.mean_canonical_mse),
                ("posed_recon_mse".to_string(), floor),
                ("rotation_family_worst_mse".to_string(), worst),
                ("canonical_com_within_3_spacings".to_string(), centred),
            ];
            write_file(&dir.join("invariance_summary.csv"), &summary_csv(&rows))?;
            write_file(&dir.join("invariance.csv"), &invariance_csv(&r))?;
            println!("median cos {:.5}  posed mse {:.5}  family worst {:.5}", r.median_cos, floor, worst);
        }
        Which::Sweep => {
            let seeds: Vec<u64> = (0..sweep_seeds).map(|s| cfg.seed + s).collect();
            let rows = latent_sweep(dims, cfg, &seeds, |d, s, acc| eprintln!("d {d} seed {s}: {acc:.4}"))?;
            write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn cmd_reconstruct(
    common: &Common,
    source: &Source,
    indices: &[usize],
    mode: Mode,
    rotations: Option<usize>,
) -> Result<(), CliError> {
    if indices.is_empty() {
        return Ok(());
    }
    let l = load_source(source)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= l.data.len()) {
        return Err(CliError::Argument(format!(
            "index {bad} out of range for a split of {} images",
            l.data.len()
        )));
    }
    if rotations == Some(0) {
        return Err(CliError::Argument("--rotations must be at least 1".into()));
    }
    let dir = out_dir(&l.ckpt.config, common)?;
    let model = &l.ckpt.trainer.model;
    let ext = if model.config().channels == 3 { "ppm" } else { "pgm" };
    let name = match mode {
        Mode::Posed => "posed",
        Mode::Canonical => "canonical",
    };
    let render = |img: &DiscreteImage| -> Result<DiscreteImage, CliError> {
        let code = model.encode(img).map_err(EvalError::from)?;
        let pose = match mode {
            Mode::Posed => code.pose(),
            Mode::Canonical => Pose::identity(),
        };
        Ok(model.render_code(&code.z, &pose).map_err(EvalError::from)?)
    };
    let mut rows_owned: Vec<Vec<DiscreteImage>> = Vec::new();
    for &i in indices {
        let inputs: Vec<DiscreteImage> = match rotations {
            Some(n) => (0..n)
                .map(|k| rotate_image(std::f64::consts::TAU * k as f64 / n as f64, &l.data.images[i]))
                .collect(),
            None => vec![l.data.images[i].clone()],
        };
        let outputs = inputs.iter().map(&render).collect::<Result<Vec<_>, _>>()?;
        if rotations.is_some() {
            rows_owned.push(inputs);
            rows_owned.push(outputs);
        } else {
            rows_owned.push(vec![inputs[0].clone(), outputs[0].clone()]);
        }
    }
    let rows: Vec<Vec<&DiscreteImage>> = rows_owned.iter().map(|r| r.iter().collect()).collect();
    write_grid(&dir.join(format!("reconstruct_{name}.{ext}")), &rows, 1)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(common) => cmd_generate(common),
        Command::Train { common, resume } => cmd_train(common, resume.as_deref()),
        Command::Embed { common, source } => cmd_embed(common, source),
        Command::Eval {
            common,
            source,
            which,
            probes,
            poses,
            dims,
            sweep_seeds,
        } => cmd_eval(common, source, *which, *probes, *poses, dims, *sweep_seeds),
        Command::Reconstruct {
            common,
            source,
            indices,
            mode,
            rotations,
        } => cmd_reconstruct(common, source, indices, *mode, *rotations),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
