//! Binary model checkpoints: an 8-byte magic, a u32 version, the u32
//! dimensions `N, D, D', mutator count`, then every parameter as a
//! little-endian f64 in declaration order.

use std::path::Path;

use super::model::{ModelParams, ModelShape};
use super::AttentionError;
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HFZMODEL";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 * 5;

pub fn params_to_bytes<T: Scalar>(p: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * p.data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [VERSION, p.shape.n as u32, p.shape.d as u32, p.shape.dp as u32, p.shape.n_mut as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &p.data {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out
}

pub fn params_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>, AttentionError> {
    let bad = |m: String| AttentionError::Checkpoint(m);
    if bytes.len() < HEADER || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(bad(format!("unsupported version {}", word(0))));
    }
    let shape = ModelShape { n: word(1) as usize, d: word(2) as usize, dp: word(3) as usize, n_mut: word(4) as usize };
    let body = &bytes[HEADER..];
    let expected = shape.param_count();
    if body.len() != expected * 8 {
        return Err(bad(format!("expected {expected} parameters, found {} bytes", body.len())));
    }
    let data = body.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(ModelParams { shape, data })
}

pub fn save_checkpoint<T: Scalar>(p: &ModelParams<T>, path: &Path) -> Result<(), AttentionError> {
    std::fs::write(path, params_to_bytes(p)).map_err(|e| AttentionError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, AttentionError> {
    let bytes = std::fs::read(path).map_err(|e| AttentionError::Checkpoint(format!("{}: {e}", path.display())))?;
    params_from_bytes(&bytes)
}
