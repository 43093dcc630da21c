//! Binary checkpoint: `COLO`, a little-endian `u32` version, a `u64` header
//! length, a JSON header with a tensor manifest, then raw little-endian
//! `f32` payloads at the manifest offsets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainState};
use crate::error::{ColoError, Result};
use crate::model::{ModelConfig, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"COLO";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Relative to the start of the payload section.
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos_hi: u64,
    word_pos_lo: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    step: u64,
    adam_step: u64,
    rng: RngState,
    tensors: Vec<ManifestEntry>,
}

fn push_tensor(name: String, shape: Vec<usize>, data: &[f32], manifest: &mut Vec<ManifestEntry>, payload: &mut Vec<u8>) {
    let offset = payload.len() as u64;
    data.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
    manifest.push(ManifestEntry { name, dtype: "f32".into(), shape, offset, length: payload.len() as u64 - offset });
}

/// Serializes a training state.
pub fn write_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in state.params.iter() {
        push_tensor(name.clone(), t.shape().to_vec(), t.data(), &mut manifest, &mut payload);
    }
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for ((name, t), m) in state.params.iter().zip(moments) {
            push_tensor(format!("{prefix}{name}"), t.shape().to_vec(), m, &mut manifest, &mut payload);
        }
    }
    let word_pos = state.rng.get_word_pos();
    let header = Header {
        model_config: state.model_config.clone(),
        train_config: state.train_config.clone(),
        step: state.step,
        adam_step: state.adam.step,
        rng: RngState {
            seed: state.rng.get_seed().to_vec(),
            stream: state.rng.get_stream(),
            word_pos_hi: (word_pos >> 64) as u64,
            word_pos_lo: word_pos as u64,
        },
        tensors: manifest,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> ColoError {
    ColoError::Checkpoint(msg.into())
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 {
        return Err(bad(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let payload_start = 16u64.checked_add(header_len).filter(|&e| e <= bytes.len() as u64).ok_or_else(|| bad("truncated header"))? as usize;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| bad(format!("header: {e}")))?;
    header.model_config.validate()?;
    header.train_config.validate()?;
    let payload = &bytes[payload_start..];

    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    let mut covered = 0u64;
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(bad(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        if e.length != numel as u64 * 4 {
            return Err(bad(format!("tensor {} has {} bytes for shape {:?}", e.name, e.length, e.shape)));
        }
        let end = e.offset.checked_add(e.length).filter(|&x| x <= payload.len() as u64).ok_or_else(|| bad(format!("truncated payload for {}", e.name)))?;
        let data = payload[e.offset as usize..end as usize].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?).is_some() {
            return Err(bad(format!("duplicate tensor {}", e.name)));
        }
        covered += e.length;
    }
    if covered != payload.len() as u64 {
        return Err(bad(format!("payload has {} bytes, manifest covers {covered}", payload.len())));
    }

    let mut take = |prefix: &str| -> BTreeMap<String, Tensor<f32>> {
        let keys: Vec<String> = tensors.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        keys.into_iter().map(|k| (k[prefix.len()..].to_string(), tensors.remove(&k).expect("listed key"))).collect()
    };
    let m = take("adam.m.");
    let v = take("adam.v.");
    let params = ParameterSet::from_map(tensors);
    params.check(&header.model_config)?;
    let moments = |map: BTreeMap<String, Tensor<f32>>| -> Result<Vec<Vec<f32>>> {
        if map.len() != params.len() {
            return Err(bad("optimizer moments do not match the parameters"));
        }
        params
            .iter()
            .map(|(name, p)| match map.get(name) {
                Some(t) if t.shape() == p.shape() => Ok(t.data().to_vec()),
                _ => Err(bad(format!("missing or misshapen moment for {name}"))),
            })
            .collect()
    };
    let adam = AdamState { m: moments(m)?, v: moments(v)?, step: header.adam_step };

    let seed: [u8; 32] = header.rng.seed.as_slice().try_into().map_err(|_| bad("rng seed must be 32 bytes"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos((u128::from(header.rng.word_pos_hi) << 64) | u128::from(header.rng.word_pos_lo));
    Ok(TrainState { model_config: header.model_config, train_config: header.train_config, params, adam, step: header.step, rng })
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    std::fs::write(path, write_checkpoint(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    read_checkpoint(&std::fs::read(path)?)
}
