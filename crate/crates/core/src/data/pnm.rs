use std::path::Path;

use super::DataError;
use crate::geometry::DiscreteImage;
use crate::io::write_atomic;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (one channel) or PPM (three channels), values clamped to
/// `[0, 1]` and scaled to 0–255.
pub fn encode_pnm(img: &DiscreteImage) -> Vec<u8> {
    encode_grid(&[vec![img]], 0)
}

pub fn write_pnm(path: &Path, img: &DiscreteImage) -> Result<(), DataError> {
    write_atomic(path, &encode_pnm(img)).map_err(|e| DataError::io(path, e))
}

/// Tiles rows of equally sized images into one picture with `gap` black
/// pixels between tiles. Missing tiles in short rows stay black.
pub fn encode_grid(rows: &[Vec<&DiscreteImage>], gap: usize) -> Vec<u8> {
    let first = rows.iter().flat_map(|r| r.first()).next();
    let (c, s) = first.map_or((1, 0), |i| (i.channels(), i.side()));
    let ncols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let width = (ncols * (s + gap)).saturating_sub(gap);
    let height = (rows.len() * (s + gap)).saturating_sub(gap);
    let mut px = vec![0u8; width * height * c];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            let (y0, x0) = (ri * (s + gap), ci * (s + gap));
            for r in 0..s {
                for col in 0..s {
                    for ch in 0..c {
                        px[((y0 + r) * width + x0 + col) * c + ch] = to_byte(img.get(ch, r * s + col));
                    }
                }
            }
        }
    }
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    out
}

pub fn write_grid(path: &Path, rows: &[Vec<&DiscreteImage>], gap: usize) -> Result<(), DataError> {
    write_atomic(path, &encode_grid(rows, gap)).map_err(|e| DataError::io(path, e))
}
