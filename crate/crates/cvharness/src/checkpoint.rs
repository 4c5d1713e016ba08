//! Versioned binary checkpoints with a JSON sidecar.
//!
//! Layout (little-endian): magic `CVHCKPT\0`, `u32` version, `u64`
//! architecture hash, `u32` tensor count, then per tensor: `u16` name
//! length, UTF-8 name, `u8` rank, `u64` per dimension, and the values as
//! `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use cvharness_core::model::{Architecture, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 8] = b"CVHCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub architecture: Architecture,
    pub arch_hash: String,
    pub tensors: Vec<TensorInfo>,
    pub config_hash: Option<String>,
    pub master_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn arch_hash(arch: &Architecture) -> u64 {
    let bytes = serde_json::to_vec(arch).expect("architecture serializes");
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn tensors(arch: &Architecture) -> Vec<(TensorInfo, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    for slot in arch.layout() {
        out.push((TensorInfo { name: format!("{}.weight", slot.name), shape: slot.weight_shape.to_vec() }, slot.weight));
        out.push((TensorInfo { name: format!("{}.bias", slot.name), shape: vec![slot.bias.len()] }, slot.bias));
    }
    out
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch();
    let list = tensors(arch);
    let mut out = Vec::with_capacity(params.values().len() * 8 + 256);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&arch_hash(arch).to_le_bytes());
    out.extend_from_slice(&(list.len() as u32).to_le_bytes());
    for (info, range) in list {
        out.extend_from_slice(&(info.name.len() as u16).to_le_bytes());
        out.extend_from_slice(info.name.as_bytes());
        out.push(info.shape.len() as u8);
        for d in &info.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &params.values()[range] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint for `arch`; the stored hash and every tensor name
/// and shape must match.
pub fn decode(bytes: &[u8], arch: &Architecture) -> std::result::Result<ModelParams, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    if r.u64()? != arch_hash(arch) {
        return Err("architecture hash mismatch".into());
    }
    let list = tensors(arch);
    if r.u32()? as usize != list.len() {
        return Err("tensor count mismatch".into());
    }
    let mut values = vec![0.0; arch.param_count()];
    for (info, range) in list {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?;
        if name != info.name {
            return Err(format!("expected tensor `{}`, found `{name}`", info.name));
        }
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if shape != info.shape {
            return Err(format!("tensor `{name}` has shape {shape:?}, expected {:?}", info.shape));
        }
        for v in &mut values[range] {
            *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after last tensor".into());
    }
    ModelParams::from_values(*arch, values).map_err(|e| e.to_string())
}

pub fn save(params: &ModelParams, path: &Path, config_hash: Option<&str>, master_seed: Option<u64>) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| HarnessError::io(path, e))?;
    let arch = *params.arch();
    let sidecar = Sidecar {
        format_version: VERSION,
        architecture: arch,
        arch_hash: format!("{:016x}", arch_hash(&arch)),
        tensors: tensors(&arch).into_iter().map(|t| t.0).collect(),
        config_hash: config_hash.map(str::to_string),
        master_seed,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| HarnessError::json(&side, e))?;
    fs::write(&side, text + "\n").map_err(|e| HarnessError::io(&side, e))
}

/// Reads the sidecar for the architecture, then the binary payload.
pub fn load(path: &Path) -> Result<(ModelParams, Sidecar)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| HarnessError::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| HarnessError::json(&side, e))?;
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let params = decode(&bytes, &sidecar.architecture).map_err(|m| HarnessError::format(path, m))?;
    Ok((params, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvharness_core::model::{init_model, InitScheme};
    use cvharness_core::rng::derive_rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Architecture::new(16, 3, 5).unwrap();
        let p = init_model(&arch, &mut derive_rng(1, "ckpt"), InitScheme::Kaiming).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode(&bytes, &arch).unwrap(), p);
    }

    #[test]
    fn wrong_architecture_is_refused() {
        let arch = Architecture::new(16, 3, 5).unwrap();
        let p = init_model(&arch, &mut derive_rng(1, "ckpt"), InitScheme::Kaiming).unwrap();
        let other = Architecture::new(16, 3, 4).unwrap();
        assert!(decode(&encode(&p), &other).unwrap_err().contains("hash"));
        let mut truncated = encode(&p);
        truncated.pop();
        assert!(decode(&truncated, &arch).is_err());
    }
}
