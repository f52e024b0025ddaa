//! Binary dataset container (little-endian).
//!
//! ```text
//! magic      8 bytes  "IRLDATA\0"
//! version    u32
//! channels   u32
//! side       u32
//! count      u64
//! flags      u32      bit 0 labels, bit 1 poses, bit 2 splits
//! n_classes  u32
//! pixels     f32 × count·channels·side²   (per image, channel-major)
//! labels     u32 × count                   (if flagged)
//! splits     u8  × count, 0 train 1 test   (if flagged)
//! poses      f64 × 3·count, (θ, τx, τy)    (if flagged)
//! ```

use std::path::Path;

use super::{DataError, LabeledDataset, Split};
use crate::geometry::{DiscreteImage, Pose};
use crate::io::write_atomic;

pub const CONTAINER_MAGIC: &[u8; 8] = b"IRLDATA\0";
pub const CONTAINER_VERSION: u32 = 1;

const FLAG_LABELS: u32 = 1;
const FLAG_POSES: u32 = 2;
const FLAG_SPLITS: u32 = 4;

pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend(CONTAINER_VERSION.to_le_bytes());
    out.extend((ds.channels() as u32).to_le_bytes());
    out.extend((ds.side() as u32).to_le_bytes());
    out.extend((ds.len() as u64).to_le_bytes());
    let mut flags = FLAG_LABELS | FLAG_SPLITS;
    if ds.poses.is_some() {
        flags |= FLAG_POSES;
    }
    out.extend(flags.to_le_bytes());
    out.extend((ds.n_classes as u32).to_le_bytes());
    for img in &ds.images {
        for &v in img.pixels() {
            out.extend((v as f32).to_le_bytes());
        }
    }
    for &l in &ds.labels {
        out.extend(l.to_le_bytes());
    }
    out.extend(ds.splits.iter().map(|s| (*s == Split::Test) as u8));
    if let Some(poses) = &ds.poses {
        for p in poses {
            for v in [p.theta(), p.tau[0], p.tau[1]] {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<(), DataError> {
    ds.validate()?;
    write_atomic(path, &encode_dataset(ds)).map_err(|e| DataError::io(path, e))
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'b [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(DataError::Field {
                field,
                reason: format!("file ends at byte {} before {n} more bytes", self.bytes.len()),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CONTAINER_MAGIC {
        return Err(DataError::Field {
            field: "magic",
            reason: "not a dataset container".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(DataError::UnsupportedVersion {
            found: version,
            supported: CONTAINER_VERSION,
        });
    }
    let channels = r.u32("channels")? as usize;
    if channels != 1 && channels != 3 {
        return Err(DataError::Field {
            field: "channels",
            reason: format!("{channels} is not 1 or 3"),
        });
    }
    let side = r.u32("side")? as usize;
    let count = r.u64("count")? as usize;
    let flags = r.u32("flags")?;
    if flags & !(FLAG_LABELS | FLAG_POSES | FLAG_SPLITS) != 0 {
        return Err(DataError::Field {
            field: "flags",
            reason: format!("unknown bits in {flags:#x}"),
        });
    }
    let n_classes = r.u32("n_classes")? as usize;
    let per = channels * side * side;
    let total = count.checked_mul(per).and_then(|t| t.checked_mul(4)).ok_or(DataError::Field {
        field: "count",
        reason: "pixel payload size overflows".into(),
    })?;
    if total > bytes.len() {
        return Err(DataError::Field {
            field: "count",
            reason: format!("{count} images of {per} pixels do not fit in {} bytes", bytes.len()),
        });
    }
    let pixels = r.take(total, "pixels")?;
    let mut images = Vec::with_capacity(count);
    for chunk in pixels.chunks_exact((per * 4).max(1)).take(count) {
        let px = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        images.push(DiscreteImage::new(channels, side, px)?);
    }
    let labels = if flags & FLAG_LABELS != 0 {
        r.take(4 * count, "labels")?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    } else {
        vec![0; count]
    };
    let splits = if flags & FLAG_SPLITS != 0 {
        r.take(count, "splits")?
            .iter()
            .map(|&b| match b {
                0 => Ok(Split::Train),
                1 => Ok(Split::Test),
                other => Err(DataError::Field {
                    field: "splits",
                    reason: format!("tag {other} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![Split::Train; count]
    };
    let poses = if flags & FLAG_POSES != 0 {
        let raw = r.take(24 * count, "poses")?;
        Some(
            raw.chunks_exact(24)
                .map(|c| {
                    let f = |i: usize| f64::from_le_bytes(c[8 * i..8 * i + 8].try_into().unwrap());
                    Pose::new(f(0), [f(1), f(2)])
                })
                .collect(),
        )
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(DataError::Field {
            field: "trailer",
            reason: format!("{} unexpected bytes after the payload", bytes.len() - r.pos),
        });
    }
    let n_classes = if flags & FLAG_LABELS != 0 { n_classes } else { n_classes.max(1) };
    let ds = LabeledDataset {
        images,
        labels,
        n_classes,
        poses,
        splits,
    };
    ds.validate().map_err(|e| DataError::Field {
        field: "labels",
        reason: e.to_string(),
    })?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_dataset(&bytes)
}
