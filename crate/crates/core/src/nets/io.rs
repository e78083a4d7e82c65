//! Binary persistence of parameter-vector batches.
//!
//! Layout (all little-endian): 8-byte magic `HYVIPB01`, `d` as u64, `n` as
//! u64, then `n · d` f64 values row by row.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{NetError, Result};

pub const PARAM_BATCH_MAGIC: &[u8; 8] = b"HYVIPB01";

pub fn param_batch_to_bytes(batch: &Array2<f64>) -> Vec<u8> {
    let (n, d) = batch.dim();
    let mut out = Vec::with_capacity(24 + 8 * n * d);
    out.extend_from_slice(PARAM_BATCH_MAGIC);
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in batch.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn param_batch_from_bytes(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 24 || &bytes[..8] != PARAM_BATCH_MAGIC {
        return Err(NetError::Format("missing HYVIPB01 header".into()));
    }
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if body.len() != 8 * n * d {
        return Err(NetError::Format(format!(
            "expected {} bytes of data for {n}x{d}, found {}",
            8 * n * d,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n, d), values).unwrap())
}

pub fn write_param_batch(path: impl AsRef<Path>, batch: &Array2<f64>) -> Result<()> {
    fs::write(path, param_batch_to_bytes(batch))?;
    Ok(())
}

pub fn read_param_batch(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    param_batch_from_bytes(&fs::read(path)?)
}
