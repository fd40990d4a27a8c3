//! Binary matrix files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field                      |
//! |-------|----------------------------|
//! | 4     | magic `CSEM`               |
//! | 4     | version (u32, currently 1) |
//! | 8     | rows (u64)                 |
//! | 8     | cols (u64)                 |
//! | 4     | element width (4 or 8)     |
//! | ...   | row-major payload          |

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSEM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub rows: usize,
    pub cols: usize,
    /// Bytes per element: 4 for `f32`, 8 for `f64`.
    pub width: usize,
}

impl EmbeddingHeader {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out
    }

    /// Parses and validates the header against the total file length.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let width = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
        if width != 4 && width != 8 {
            return Err(Error::format(format!("element width {width}")));
        }
        let payload = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(u64::from(width)))
            .and_then(|n| usize::try_from(n).ok())
            .filter(|n| n.checked_add(HEADER_LEN).is_some())
            .ok_or_else(|| Error::format("dimension overflow"))?;
        let available = bytes.len() - HEADER_LEN;
        if payload > available {
            return Err(Error::format("truncated payload"));
        }
        if payload < available {
            return Err(Error::format("trailing bytes after payload"));
        }
        Ok(Self {
            rows: rows as usize,
            cols: cols as usize,
            width: width as usize,
        })
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes a matrix of 64-bit values.
pub fn encode_embeddings(matrix: ArrayView2<'_, f64>) -> Vec<u8> {
    let header = EmbeddingHeader {
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        width: 8,
    };
    let mut out = header.encode();
    out.reserve(matrix.len() * 8);
    for v in matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Encodes a matrix of 32-bit values.
pub fn encode_embeddings_f32(matrix: ArrayView2<'_, f32>) -> Vec<u8> {
    let header = EmbeddingHeader {
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        width: 4,
    };
    let mut out = header.encode();
    out.reserve(matrix.len() * 4);
    for v in matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a matrix file. 32-bit payloads are widened exactly.
pub fn decode_embeddings(bytes: &[u8]) -> Result<Array2<f64>> {
    let h = EmbeddingHeader::decode(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let values: Vec<f64> = match h.width {
        8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    Ok(Array2::from_shape_vec((h.rows, h.cols), values).expect("length checked against header"))
}

pub fn save_embeddings(matrix: ArrayView2<'_, f64>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_embeddings(matrix))
}

pub fn save_embeddings_f32(matrix: ArrayView2<'_, f32>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_embeddings_f32(matrix))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}
