//! Binary matrix files used by checkpoints: two little-endian u64 header
//! words (rows, cols) followed by row-major little-endian f64 entries.

use super::mat::Mat;
use crate::error::{MladError, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn write_mat(path: &Path, m: &Mat) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::with_capacity(16 + 8 * m.data().len());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_mat(path: &Path) -> Result<Mat> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)?;
    let rows = u64::from_le_bytes(header[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| MladError::validation("matrix header overflow"))?;
    let mut body = vec![0u8; n * 8];
    f.read_exact(&mut body)?;
    let mut data = Vec::with_capacity(n);
    for chunk in body.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Mat::from_vec(rows, cols, data)
}
