//! Single-file checkpoints: one JSON header line followed by raw
//! little-endian f32 parameter blocks in manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub params: Vec<ManifestEntry>,
    pub dtype: String,
}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(path: &Path, config: &serde_json::Value, params: &ParamStore<f32>) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash(config),
        config: config.clone(),
        params: params.manifest().into_iter().map(|(name, shape)| ManifestEntry { name, shape }).collect(),
        dtype: "f32le".into(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for id in params.ids() {
        for v in params.get(id).data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint, verifying version, dtype, hash and payload length.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor<f32>>)> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| TensorError::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION || header.dtype != "f32le" {
        return Err(TensorError::Checkpoint(format!("unsupported version {} / dtype {}", header.version, header.dtype)));
    }
    if config_hash(&header.config) != header.config_hash {
        return Err(TensorError::Checkpoint("config hash mismatch".into()));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(TensorError::Checkpoint(format!("payload has {} bytes, expected {}", payload.len(), expected * 4)));
    }
    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = header
        .params
        .iter()
        .map(|p| {
            let n = p.shape.iter().product();
            Tensor::new(p.shape.clone(), floats.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, tensors))
}

/// Copies checkpoint tensors into `params`, requiring an identical manifest.
pub fn restore_params(header: &CheckpointHeader, tensors: Vec<Tensor<f32>>, params: &mut ParamStore<f32>) -> Result<()> {
    let manifest = params.manifest();
    if manifest.len() != header.params.len()
        || manifest.iter().zip(&header.params).any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err(TensorError::Checkpoint("parameter manifest does not match model".into()));
    }
    for (id, t) in params.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
        params.set(id, t)?;
    }
    Ok(())
}
