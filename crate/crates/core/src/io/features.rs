//! Binary feature files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VMRF" | version: u32 = 1 | dtype: u8 = 1 (f32) | rows: u32 | cols: u32 | rows*cols f32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub const MAGIC: &[u8; 4] = b"VMRF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4;

/// Serializes a matrix; values are narrowed to `f32`.
pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a feature file image; `path` only labels diagnostics.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let fail = |msg: String| Error::format(path, msg);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("header: file is {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("magic: expected \"VMRF\", found {:?}", &bytes[0..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(fail(format!("version: expected {VERSION}, found {version}")));
    }
    let dtype = bytes[8];
    if dtype != DTYPE_F32 {
        return Err(fail(format!("dtype: expected {DTYPE_F32} (f32), found {dtype}")));
    }
    let rows = u32_at(bytes, 9) as usize;
    let cols = u32_at(bytes, 13) as usize;
    if rows == 0 || cols == 0 {
        return Err(fail(format!("rows/cols: shape {rows}x{cols} is empty")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(format!("rows/cols: shape {rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(fail(format!(
            "payload: {rows}x{cols} needs {expected} bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(fail(format!("payload: non-finite value at row {}, col {}", k / cols, k % cols)));
    }
    FeatureMatrix::new(rows, cols, data)
}

pub fn read(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, m: &FeatureMatrix) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}
