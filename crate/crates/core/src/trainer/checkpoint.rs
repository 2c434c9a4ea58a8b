use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VDEPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Parameters plus the configs that produced them. Values are persisted as
/// 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Params,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.numel() as u64;
                e
            })
            .collect();
        CheckpointHeader {
            model: self.model.clone(),
            train: self.train.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("missing VDEPCKPT magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt("header length exceeds file size"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Format(format!("header: {e}")))?;
        let blobs = &bytes[header_end..];

        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0u64;
        for e in &header.tensors {
            if e.offset != expected_offset {
                return Err(Error::Format(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            let raw = blobs
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("tensor {} truncated", e.name)))?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Format(format!("tensor {}: {err}", e.name)))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {}", e.name)));
            }
            expected_offset = end as u64;
        }
        if expected_offset as usize != blobs.len() {
            return Err(fmt("trailing bytes after the last tensor"));
        }
        let ckpt = Self {
            model: header.model,
            train: header.train,
            params: Params::from_map(tensors),
        };
        ckpt.model.validate()?;
        ckpt.params.check_layout(&ckpt.model)?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(params: &Params, model: &ModelConfig, train: &TrainConfig, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        model: model.clone(),
        train: train.resolved(),
        params: params.clone(),
    };
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and checks that it was built for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    expected.ensure_matches(&ckpt.model)?;
    Ok(ckpt)
}
