//! Binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic  "TRDYNCKP"            8 bytes
//! version u32
//! header_len u32
//! header  JSON {config, step, tensors: [{name, shape}]}
//! data    f32 × Σ tensor sizes, row-major, in header order
//! ```
//!
//! Weights are kept f32-representable in memory, so a round trip is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DynamicsModel, ModelConfig, TerrainMode};
use crate::nn::TensorSpec;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TRDYNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DynamicsModel,
    /// Number of optimiser steps taken when the checkpoint was written.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    step: u64,
    tensors: Vec<TensorSpec>,
}

fn mlp_len(input: usize, hidden: usize, output: usize) -> usize {
    input * hidden + hidden + hidden * output + output
}

impl ModelConfig {
    /// Total parameter count, computed without allocating the model.
    pub fn param_count(&self) -> usize {
        let (e, h, bd) = (self.embed_dim, self.gru_hidden, self.beta_dim);
        let tau = if self.terrain_mode == TerrainMode::Lookup {
            mlp_len(self.terrain_dim, e, e)
        } else {
            0
        };
        mlp_len(self.state_encoder_input(), e, h)
            + mlp_len(self.action_dim, e, e)
            + tau
            + mlp_len(bd, e, e)
            + 3 * h * (self.gru_input() + h + 2)
            + mlp_len(h, e, 2 * self.obs_dim)
            + mlp_len(crate::sim::TRANSITION_DIM, e, e)
            + e
            + mlp_len(e, e, bd)
            + e * bd
            + bd
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        config: ckpt.model.config.clone(),
        step: ckpt.step,
        tensors: ckpt.model.params.specs.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * ckpt.model.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in &ckpt.model.params.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(bytes, 8)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            expected: format!("checkpoint version {CHECKPOINT_VERSION}"),
            found: format!("checkpoint version {version}"),
        });
    }
    let header_len = read_u32(bytes, 12)? as usize;
    if header_len > MAX_HEADER_LEN || 16 + header_len > bytes.len() {
        return Err(Error::Format("checkpoint header length out of range".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.config.validate()?;
    let data = &bytes[16 + header_len..];
    let expected = header.config.param_count();
    if !data.len().is_multiple_of(4) || data.len() / 4 != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} bytes of weights, config needs {expected} values",
            data.len()
        )));
    }
    let mut model = DynamicsModel::new(header.config, 0)?;
    let same_layout = model.params.specs.len() == header.tensors.len()
        && model
            .params
            .specs
            .iter()
            .zip(&header.tensors)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if !same_layout {
        return Err(Error::Format("checkpoint tensor list does not match its config".into()));
    }
    for (dst, chunk) in model.params.values.iter_mut().zip(data.chunks_exact(4)) {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite weights".into()));
        }
        *dst = v as f64;
    }
    Ok(Checkpoint { model, step: header.step })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: TerrainMode) -> ModelConfig {
        ModelConfig {
            embed_dim: 7,
            gru_hidden: 5,
            ..ModelConfig::full(mode)
        }
    }

    #[test]
    fn param_count_matches_allocation() {
        for mode in [TerrainMode::Lookup, TerrainMode::ObservedConcat] {
            let cfg = small(mode);
            assert_eq!(cfg.param_count(), DynamicsModel::new(cfg, 3).unwrap().n_params());
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let model = DynamicsModel::new(small(TerrainMode::Lookup), 4).unwrap();
        let ckpt = Checkpoint { model, step: 17 };
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.model.config, ckpt.model.config);
        assert_eq!(back.model.params, ckpt.model.params);
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let ckpt = Checkpoint {
            model: DynamicsModel::new(small(TerrainMode::ObservedConcat), 4).unwrap(),
            step: 0,
        };
        let mut bytes = encode_checkpoint(&ckpt);
        bytes[8] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Incompatible { .. })));
        let mut bytes = encode_checkpoint(&ckpt);
        bytes.pop();
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }
}
