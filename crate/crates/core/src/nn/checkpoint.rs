use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

use super::model::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PHYM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic, u32 version, u32 height, u32 width, u32 tensor count, one
/// u32 element count per tensor, then every value as f64, all little-endian.
pub fn checkpoint_bytes<T: Scalar>(p: &ModelParams<T>) -> Vec<u8> {
    let tensors = p.tensors();
    let mut out = Vec::with_capacity(20 + 4 * tensors.len() + 8 * p.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        p.height as u32,
        p.width as u32,
        tensors.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
    }
    for t in &tensors {
        for &v in t.iter() {
            out.extend_from_slice(&to_f64(v).to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt(format!("truncated header at byte {i}")))
    };
    if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(corrupt("bad magic".into()));
    }
    let version = word(4)?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let (h, w, n) = (word(8)? as usize, word(12)? as usize, word(16)? as usize);
    let mut params = ModelParams::<T>::init(h, w, 0)
        .map_err(|e| corrupt(format!("bad geometry: {e}")))?;
    let expected: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if n != expected.len() {
        return Err(corrupt(format!("{n} tensors, expected {}", expected.len())));
    }
    for (i, &want) in expected.iter().enumerate() {
        let got = word(20 + 4 * i)? as usize;
        if got != want {
            return Err(corrupt(format!("tensor {i} has {got} values, expected {want}")));
        }
    }
    let mut pos = 20 + 4 * n;
    let total: usize = expected.iter().sum();
    if bytes.len() != pos + 8 * total {
        return Err(corrupt(format!(
            "payload is {} bytes, expected {}",
            bytes.len().saturating_sub(pos),
            8 * total
        )));
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            let x = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            if !x.is_finite() {
                return Err(corrupt("non-finite parameter".into()));
            }
            *v = lit(x);
            pos += 8;
        }
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(p: &ModelParams<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
