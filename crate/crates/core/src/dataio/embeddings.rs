//! Binary embedding files.
//!
//! Layout, all little-endian: 4-byte magic `OVEM`, `u32` rows, `u32` dim,
//! then `rows * dim` `f32` values in row-major order. Trailing bytes are
//! rejected.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::rng::{sample_rng, stream};
use crate::vlalign::EmbeddingMatrix;

pub const MAGIC: [u8; 4] = *b"OVEM";
const HEADER_LEN: usize = 12;

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows * dim * 4;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingMatrix::new(rows, dim, values).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Stores the matrix, narrowing values to `f32`.
pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + m.values().len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    for &v in m.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Seeded Gaussian rows normalized to unit length.
pub fn pseudo_embeddings(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut rng = sample_rng(seed, 0, stream::EMBEDDING);
    let mut values = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let row: Vec<f64> = loop {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if row.iter().any(|v| *v != 0.0) {
                break row;
            }
        };
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.extend(row.iter().map(|v| v / norm));
    }
    EmbeddingMatrix::new(rows, dim, values).expect("generated values are finite")
}
