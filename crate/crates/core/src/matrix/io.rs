//! `.fmat` binary matrix files.
//!
//! Layout (all little-endian): `b"FMAT"`, `u32` version (1), `u64` rows,
//! `u64` cols, then `rows * cols` IEEE-754 `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";
pub const FMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;

fn format_err<T>(offset: u64, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        message: message.into(),
    })
}

pub fn write_matrix<W: Write>(mut w: W, m: &DenseMatrix) -> Result<()> {
    w.write_all(FMAT_MAGIC)?;
    w.write_all(&FMAT_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.len() * 4);
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN as usize {
        return format_err(bytes.len() as u64, "truncated header");
    }
    if &bytes[0..4] != FMAT_MAGIC {
        return format_err(0, "bad magic");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FMAT_VERSION {
        return format_err(4, format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = match rows.checked_mul(cols) {
        Some(n) if n.checked_mul(4).is_some() => n,
        _ => return format_err(8, format!("dimensions {rows}x{cols} overflow")),
    };
    let expected = HEADER_LEN + count * 4;
    let actual = bytes.len() as u64;
    if actual < expected {
        return format_err(
            actual,
            format!("truncated payload: {rows}x{cols} needs {expected} bytes, file has {actual}"),
        );
    }
    if actual > expected {
        return format_err(expected, "trailing bytes after payload");
    }
    let mut data = Vec::with_capacity(count as usize);
    for (i, chunk) in bytes[HEADER_LEN as usize..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return format_err(HEADER_LEN + 4 * i as u64, "non-finite value");
        }
        data.push(v);
    }
    DenseMatrix::new(rows as usize, cols as usize, data)
}

pub fn save_matrix(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}
