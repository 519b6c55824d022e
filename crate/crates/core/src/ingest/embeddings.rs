//! Binary embedding store.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    4 bytes  "PJE1"
//! version  u32      1
//! count    u64      number of records
//! dim      u32      values per record
//! records  count x (id: u64, values: dim x f32)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"PJE1";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

/// Embeddings keyed by image id, stored as 32-bit reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<u64>,
    values: Vec<f32>,
    index: HashMap<u64, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::invalid(format!("embedding dimension {dim} out of range")));
        }
        Ok(EmbeddingStore {
            dim,
            ..Default::default()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn push(&mut self, id: u64, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::invalid(format!(
                "record {id} has {} values, store dimension is {}",
                values.len(),
                self.dim
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("record {id} has non-finite value at index {i}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&[f32]> {
        let &i = self.index.get(&id)?;
        Some(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// The record widened to 64-bit reals.
    pub fn get_f64(&self, id: u64) -> Option<Vec<f64>> {
        self.get(id).map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.ids.iter().copied().zip(self.values.chunks_exact(self.dim))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, vals) in self.iter() {
            out.extend_from_slice(&id.to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and validates a store; `path` only labels diagnostics.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |offset: usize, message: String| Error::Corruption {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < 4 || bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "bad magic (expected \"PJE1\")".into(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(
                bytes.len(),
                format!("header truncated ({} of {HEADER_LEN} bytes)", bytes.len()),
            ));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != EMBEDDING_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported version {version} (expected {EMBEDDING_VERSION})"),
            });
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(corrupt(16, "dimension is zero".into()));
        }
        let record_len = 8 + 4 * dim;
        let body = bytes.len() - HEADER_LEN;
        let available = (body / record_len) as u64;
        if available < count {
            let offset = HEADER_LEN + available as usize * record_len;
            return Err(corrupt(
                offset,
                format!("truncated record {available}: header declares {count} records, file holds {available}"),
            ));
        }
        let expected_len = HEADER_LEN + count as usize * record_len;
        if bytes.len() != expected_len {
            return Err(corrupt(
                expected_len,
                format!("{} trailing bytes after {count} records", bytes.len() - expected_len),
            ));
        }

        let integrity = |message: String| Error::Integrity {
            path: path.to_path_buf(),
            message,
        };
        let mut store = EmbeddingStore::new(dim)?;
        store.ids.reserve(count as usize);
        store.values.reserve(count as usize * dim);
        let mut vals = Vec::with_capacity(dim);
        for r in 0..count as usize {
            let start = HEADER_LEN + r * record_len;
            let id = u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
            vals.clear();
            for (j, chunk) in bytes[start + 8..start + record_len].chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(integrity(format!(
                        "non-finite value in record {r} (id {id}) at index {j}, byte offset {}",
                        start + 8 + 4 * j
                    )));
                }
                vals.push(v);
            }
            if store.index.contains_key(&id) {
                return Err(integrity(format!(
                    "duplicate id {id} in record {r}, byte offset {start}"
                )));
            }
            store.index.insert(id, store.ids.len());
            store.ids.push(id);
            store.values.extend_from_slice(&vals);
        }
        Ok(store)
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes, path)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&store.to_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
