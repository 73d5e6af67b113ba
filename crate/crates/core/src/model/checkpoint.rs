//! Checkpoint layout: `"LOCOCK01" | u32 header_len | JSON header | f64 x n_params`,
//! integers and floats little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{LocoError, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"LOCOCK01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub stage: u8,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, seed: u64, stage: u8) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                model: params.config.clone(),
                seed,
                stage,
                n_params: params.n_params(),
            },
            params,
        }
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let flat = ckpt.params.to_flat();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * flat.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LocoError::Checkpoint("missing checkpoint magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| LocoError::Checkpoint("header extends past end of file".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..payload_start])?;
    let payload = &bytes[payload_start..];
    if payload.len() != header.n_params * 8 {
        return Err(LocoError::SizeMismatch {
            expected: payload_start + header.n_params * 8,
            found: bytes.len(),
        });
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_flat(&header.model, &flat)
        .map_err(|e| LocoError::Checkpoint(format!("header does not match payload: {e}")))?;
    if !params.is_finite() {
        return Err(LocoError::NonFinite("checkpoint parameters".into()));
    }
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(ckpt)?).map_err(|e| LocoError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).map_err(|e| LocoError::io(path, e))?)
}
