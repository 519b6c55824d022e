//! Binary checkpoints: model params, optimizer state and step counter.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic       4 bytes  "PJC1"
//! version     u32      1
//! dim         u32
//! proj_dim    u32
//! distance    u8       0 = euclidean, 1 = squared-euclidean
//! step        u64      mini-batches completed
//! b_distance  f64
//! b_magnitude f64
//! g           dim * proj_dim x f64, row-major
//! adam_step   u64
//! m           (dim * proj_dim + 2) x f64
//! v           (dim * proj_dim + 2) x f64
//! ```

use std::fs;
use std::path::Path;

use crate::engine::{DistanceKind, ModelParams};
use crate::error::{Error, Result};
use crate::trainer::OptimizerState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PJC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(p.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(p.proj_dim() as u32).to_le_bytes());
        out.push(p.distance.code());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&p.b_distance.to_le_bytes());
        out.extend_from_slice(&p.b_magnitude.to_le_bytes());
        for v in &p.g {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        for v in self.optimizer.m.iter().chain(&self.optimizer.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(format("bad magic (expected \"PJC1\")".into()));
        }
        let mut r = Reader { bytes, pos: 4, path };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let dim = r.u32()? as usize;
        let proj_dim = r.u32()? as usize;
        let code_at = r.pos;
        let code = r.u8()?;
        let distance = DistanceKind::from_code(code).ok_or_else(|| Error::Corruption {
            path: path.to_path_buf(),
            offset: code_at as u64,
            message: format!("unknown distance code {code}"),
        })?;
        let step = r.u64()?;
        let b_distance = r.f64()?;
        let b_magnitude = r.f64()?;
        let n = dim
            .checked_mul(proj_dim)
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| r.corrupt(format!("implausible shape {dim}x{proj_dim}")))?;
        let g = r.f64s(n)?;
        let adam_step = r.u64()?;
        let m = r.f64s(n + 2)?;
        let v = r.f64s(n + 2)?;
        if r.pos != bytes.len() {
            return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = ModelParams::new(dim, proj_dim, g, b_distance, b_magnitude)
            .map_err(|e| Error::Integrity {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .with_distance(distance);
        Ok(Checkpoint {
            params,
            optimizer: OptimizerState { step: adam_step, m, v },
            step,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn corrupt(&self, message: String) -> Error {
        Error::Corruption {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!(
                "truncated: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(self.f64s(1)?[0])
    }

    /// Reads `n` values, rejecting NaN and infinities with their offset.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let path = self.path;
        let raw = self.take(n * 8)?;
        raw.chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let v = f64::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Integrity {
                        path: path.to_path_buf(),
                        message: format!("non-finite value {v} at byte offset {}", start + 8 * i),
                    })
                }
            })
            .collect()
    }
}

pub fn write_checkpoint(
    params: &ModelParams,
    optimizer: &OptimizerState,
    step: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    if optimizer.len() != params.num_trainable() {
        return Err(Error::invalid(format!(
            "optimizer state has {} entries, params have {}",
            optimizer.len(),
            params.num_trainable()
        )));
    }
    let path = path.as_ref();
    let ckpt = Checkpoint {
        params: params.clone(),
        optimizer: optimizer.clone(),
        step,
    };
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
