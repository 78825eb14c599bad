//! Little-endian `f64` row-major block files shared by datasets and
//! checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BlockError {
    #[error("truncated block: expected {expected} bytes, data ends at offset {offset}")]
    Truncated { expected: u64, offset: u64 },
    #[error("trailing bytes after offset {offset}")]
    Trailing { offset: u64 },
    #[error("non-finite value at offset {offset}")]
    NonFinite { offset: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_block(path: &Path, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()
}

/// Reads exactly `count` values.
pub fn read_block(path: &Path, count: usize) -> Result<Vec<f64>, BlockError> {
    let bytes = fs::read(path)?;
    let expected = (count * 8) as u64;
    if (bytes.len() as u64) < expected {
        // report the start of the first incomplete value
        let offset = (bytes.len() as u64 / 8) * 8;
        return Err(BlockError::Truncated { expected, offset });
    }
    if bytes.len() as u64 > expected {
        return Err(BlockError::Trailing { offset: expected });
    }
    let mut out = Vec::with_capacity(count);
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(BlockError::NonFinite { offset: (i * 8) as u64 });
        }
        out.push(v);
    }
    Ok(out)
}
