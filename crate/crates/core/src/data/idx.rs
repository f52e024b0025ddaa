use std::path::Path;

use super::{DataError, LabeledDataset, Split};
use crate::geometry::DiscreteImage;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format {
            what,
            offset,
            reason: "unexpected end of file in header".into(),
        })
}

fn expect_magic(bytes: &[u8], magic: u32, what: &'static str) -> Result<(), DataError> {
    let found = read_u32(bytes, 0, what)?;
    if found != magic {
        return Err(DataError::Format {
            what,
            offset: 0,
            reason: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

/// Parses an IDX3 unsigned-byte image file into square grayscale images
/// with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<DiscreteImage>, DataError> {
    const WHAT: &str = "IDX image file";
    expect_magic(bytes, IMAGES_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    let rows = read_u32(bytes, 8, WHAT)? as usize;
    let cols = read_u32(bytes, 12, WHAT)? as usize;
    if rows != cols {
        return Err(DataError::Format {
            what: WHAT,
            offset: 8,
            reason: format!("images are {rows}x{cols}; only square images are supported"),
        });
    }
    let body = &bytes[16..];
    let per = rows * cols;
    let need = n
        .checked_mul(per)
        .ok_or_else(|| DataError::Format {
            what: WHAT,
            offset: 4,
            reason: "image count overflows".into(),
        })?;
    if body.len() != need {
        return Err(DataError::Format {
            what: WHAT,
            offset: 16 + body.len().min(need),
            reason: format!("header promises {need} pixel bytes, file holds {}", body.len()),
        });
    }
    body.chunks_exact(per.max(1))
        .take(n)
        .map(|px| Ok(DiscreteImage::new(1, rows, px.iter().map(|&b| b as f64 / 255.0).collect())?))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>, DataError> {
    const WHAT: &str = "IDX label file";
    expect_magic(bytes, LABELS_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DataError::Format {
            what: WHAT,
            offset: 8 + body.len().min(n),
            reason: format!("header promises {n} labels, file holds {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as u32).collect())
}

/// Reads an IDX image/label pair. All images are tagged train.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let img_bytes = std::fs::read(images_path).map_err(|e| DataError::io(images_path, e))?;
    let lab_bytes = std::fs::read(labels_path).map_err(|e| DataError::io(labels_path, e))?;
    let images = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lab_bytes)?;
    if images.len() != labels.len() {
        return Err(DataError::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let n = images.len();
    Ok(LabeledDataset {
        images,
        labels,
        n_classes,
        poses: None,
        splits: vec![Split::Train; n],
    })
}

/// Places each image in the centre of a larger zero frame.
pub fn embed_centered(ds: &LabeledDataset, side: usize) -> Result<LabeledDataset, DataError> {
    let old = ds.side();
    if side < old {
        return Err(DataError::Consistency(format!("cannot embed {old} pixels into {side}")));
    }
    let off = (side - old) / 2;
    let mut out = ds.clone();
    for img in &mut out.images {
        let c = img.channels();
        let mut px = vec![0.0; c * side * side];
        for ch in 0..c {
            for r in 0..old {
                for col in 0..old {
                    px[ch * side * side + (r + off) * side + col + off] = img.get(ch, r * old + col);
                }
            }
        }
        *img = DiscreteImage::new(c, side, px)?;
    }
    Ok(out)
}
