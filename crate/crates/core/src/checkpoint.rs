//! Binary training checkpoint (little-endian).
//!
//! ```text
//! magic     8 bytes "IRLCKPT\0"
//! version   u32
//! config    u64 length + UTF-8 TOML of the run configuration
//! seed      u64
//! params    u32 count, then per tensor: u32 name length, name,
//!           u32 rank, u64 dims, f64 values
//! fourier   u64 f, f64 sigma, f64 × 2f
//! adam      u64 step, u64 length, f64 m, f64 v
//! history   u64 rows, each u64 epoch + f64 recon, consis, symm, total
//! crc32     u32 over every preceding byte
//! ```
//!
//! All sampling during training is keyed on the seed and epoch counter,
//! so these two values stand in for a generator state.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AdamState, ParamSet};
use crate::config::{ConfigError, RunConfig};
use crate::io::write_atomic;
use crate::models::{FourierFeatureMap, Model, ModelError};
use crate::train::{EpochStats, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IRLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint does not match its config: {0}")]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub trainer: Trainer,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend(v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend(v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode_checkpoint(config: &RunConfig, trainer: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let toml = config.to_toml();
    put_u64(&mut out, toml.len() as u64);
    out.extend(toml.as_bytes());
    put_u64(&mut out, trainer.seed);

    let params = trainer.model.params();
    put_u32(&mut out, params.entries().len() as u32);
    for (i, e) in params.entries().iter().enumerate() {
        put_u32(&mut out, e.name.len() as u32);
        out.extend(e.name.as_bytes());
        put_u32(&mut out, e.shape.len() as u32);
        for &d in &e.shape {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, params.get(i));
    }

    let fourier = trainer.model.fourier();
    put_u64(&mut out, fourier.num_frequencies() as u64);
    put_f64s(&mut out, &[fourier.sigma()]);
    put_f64s(&mut out, fourier.matrix());

    let adam = &trainer.adam;
    put_u64(&mut out, adam.step);
    put_u64(&mut out, adam.m.len() as u64);
    put_f64s(&mut out, &adam.m);
    put_f64s(&mut out, &adam.v);

    put_u64(&mut out, trainer.history.len() as u64);
    for s in &trainer.history {
        put_u64(&mut out, s.epoch as u64);
        put_f64s(&mut out, &[s.recon, s.consis, s.symm, s.total]);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, trainer: &Trainer) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_checkpoint(config, trainer)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'b [u8], CheckpointError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Field {
                field,
                reason: format!("truncated: {n} bytes needed at offset {}", self.pos),
            }),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    /// A length that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize, field: &'static str) -> Result<usize, CheckpointError> {
        let n = self.u64(field)?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.checked_mul(unit as u64).is_none_or(|b| b > remaining) {
            return Err(CheckpointError::Field {
                field,
                reason: format!("length {n} exceeds the file"),
            });
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.saturating_mul(8), field)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Field {
            field: "magic",
            reason: "not a checkpoint file".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Field {
            field: "crc32",
            reason: "file too short".into(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 12 };
    let toml_len = r.len(1, "config")?;
    let toml = std::str::from_utf8(r.take(toml_len, "config")?).map_err(|e| CheckpointError::Field {
        field: "config",
        reason: e.to_string(),
    })?;
    let config = RunConfig::from_toml(toml)?;
    let seed = r.u64("seed")?;

    let count = r.u32("params")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32("param name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "param name")?)
            .map_err(|e| CheckpointError::Field {
                field: "param name",
                reason: e.to_string(),
            })?
            .to_string();
        let rank = r.u32("param rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("param dims")? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Field {
            field: "param dims",
            reason: format!("{name}: size overflows"),
        })?;
        let values = r.f64s(len, "param values")?;
        params.push_values(&name, &shape, values);
    }

    let f = r.len(16, "fourier")?;
    let sigma = r.f64s(1, "fourier sigma")?[0];
    let fourier = FourierFeatureMap::from_matrix(r.f64s(2 * f, "fourier")?, sigma).expect("even length");
    let model = Model::from_parts(config.model.clone(), params, fourier)?;

    let step = r.u64("adam step")?;
    let n = r.len(16, "adam moments")?;
    if n != model.params().len() {
        return Err(CheckpointError::Field {
            field: "adam moments",
            reason: format!("{n} moments for {} parameters", model.params().len()),
        });
    }
    let mut adam = AdamState::new(config.optimizer.adam(), n);
    adam.step = step;
    adam.m = r.f64s(n, "adam moments")?;
    adam.v = r.f64s(n, "adam moments")?;

    let rows = r.len(40, "history")?;
    let mut history = Vec::with_capacity(rows);
    for _ in 0..rows {
        let epoch = r.u64("history")? as usize;
        let v = r.f64s(4, "history")?;
        history.push(EpochStats {
            epoch,
            recon: v[0],
            consis: v[1],
            symm: v[2],
            total: v[3],
        });
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Field {
            field: "trailer",
            reason: format!("{} unexpected bytes before the checksum", body.len() - r.pos),
        });
    }
    Ok(Checkpoint {
        config,
        trainer: Trainer {
            model,
            adam,
            seed,
            history,
        },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
