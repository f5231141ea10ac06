//! On-disk formats: the `PCT1` tensor container and binary PGM/PPM frames.
//!
//! Container layout, all little-endian:
//!
//! ```text
//! b"PCT1" | rank: u32 | dims: rank × u32 | payload: product(dims) × f32
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::LatentGrid;
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"PCT1";

/// Encodes a tensor as a container. Values are narrowed to `f32`.
pub fn encode_container(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {n} values, got {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * n);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Shape(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::Format(format!(
                "container truncated while reading {what}"
            )));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4, "magic")? != CONTAINER_MAGIC {
        return Err(Error::Format("bad container magic (expected PCT1)".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let rank = u32_at(take(4, "rank")?);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32_at(take(4, "dimensions")?));
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
    let payload = take(4 * n, "payload")?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after container payload",
            cursor.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_container(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(shape, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

/// Hex SHA-256 of a byte string, used in run manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels), values clamped to `[0, 1]`.
pub fn encode_netpbm(grid: &LatentGrid) -> Result<Vec<u8>> {
    let (h, w) = (grid.height, grid.width);
    let magic = match grid.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Shape(format!(
                "can only render 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            for ch in 0..grid.channels {
                out.push(quantize(grid.at(ch, i, j)));
            }
        }
    }
    Ok(out)
}

pub fn render_frame(grid: &LatentGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_netpbm(grid)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
