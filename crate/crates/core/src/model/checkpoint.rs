//! Versioned checkpoint files.
//!
//! Layout, all text lines terminated by `\n`:
//!
//! ```text
//! MFDPCKPT v1
//! checksum <16 lowercase hex digits>
//! <one-line JSON header>
//! <payload: every tensor as little-endian f64, in header order>
//! ```
//!
//! The checksum is FNV-1a (64-bit) over the header line (including its
//! newline) and the payload. Tensor offsets in the header are element
//! offsets into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MfdpModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "MFDPCKPT";

/// Optimizer moments aligned with the model's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MfdpModel,
    pub optimizer: Option<OptimizerSnapshot>,
    /// Free-form metadata (the trainer stores its configuration here).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    optimizer_step: Option<u64>,
    meta: serde_json::Value,
}

fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let store = ckpt.model.params();
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, t: &Tensor, entries: &mut Vec<TensorEntry>| {
        entries.push(TensorEntry { name, shape: t.shape().to_vec(), offset });
        offset += t.numel();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for leaf in store.leaves() {
        push(leaf.name.clone(), &leaf.value, &mut entries);
    }
    if let Some(opt) = &ckpt.optimizer {
        if opt.m.len() != store.len() || opt.v.len() != store.len() {
            return Err(Error::contract("save_checkpoint", "optimizer state does not match the parameter count"));
        }
        for (leaf, (m, v)) in store.leaves().iter().zip(opt.m.iter().zip(&opt.v)) {
            push(format!("adam.m.{}", leaf.name), m, &mut entries);
            push(format!("adam.v.{}", leaf.name), v, &mut entries);
        }
    }
    let header = Header {
        config: ckpt.model.config().clone(),
        tensors: entries,
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        meta: ckpt.meta.clone(),
    };
    let mut header_line = serde_json::to_string(&header).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    header_line.push('\n');
    let sum = fnv1a(&[header_line.as_bytes(), &payload]);
    let mut out = format!("{MAGIC} v{CHECKPOINT_VERSION}\nchecksum {sum:016x}\n").into_bytes();
    out.extend_from_slice(header_line.as_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

/// Parses checkpoint bytes. When `expected` is given, the stored
/// configuration must equal it.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let (magic, rest) = split_line(bytes).ok_or_else(|| Error::format("checkpoint", "missing version line"))?;
    let magic = std::str::from_utf8(magic).map_err(|_| Error::format("checkpoint", "version line is not text"))?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::format("checkpoint", format!("not a checkpoint (first line `{magic}`)")))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let (sum_line, body) = split_line(rest).ok_or(Error::CheckpointChecksum { stored: 0, computed: fnv1a(&[rest]) })?;
    let stored = std::str::from_utf8(sum_line)
        .ok()
        .and_then(|l| l.strip_prefix("checksum "))
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .ok_or_else(|| Error::format("checkpoint", "malformed checksum line"))?;
    let computed = fnv1a(&[body]);
    if stored != computed {
        return Err(Error::CheckpointChecksum { stored, computed });
    }
    let (header_line, payload) = split_line(body).ok_or_else(|| Error::format("checkpoint", "missing header"))?;
    let header: Header =
        serde_json::from_slice(header_line).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    if let Some(cfg) = expected {
        if *cfg != header.config {
            return Err(Error::ConfigMismatch(describe_mismatch(cfg, &header.config)));
        }
    }
    if payload.len() % 8 != 0 {
        return Err(Error::format("checkpoint", "payload length is not a multiple of 8"));
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::format("checkpoint", format!("tensor `{}` exceeds the payload", e.name)))?;
        tensors.push((e.name.clone(), Tensor::new(&e.shape, data.to_vec())?));
    }

    let mut model = MfdpModel::build(header.config, 0)?;
    let count = model.params().len();
    let optimizer = match header.optimizer_step {
        None => None,
        Some(step) => {
            if tensors.len() != 3 * count {
                return Err(Error::format("checkpoint", "optimizer state is incomplete"));
            }
            let moments = tensors.split_off(count);
            let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
            for pair in moments.chunks_exact(2) {
                m.push(pair[0].1.clone());
                v.push(pair[1].1.clone());
            }
            Some(OptimizerSnapshot { step, m, v })
        }
    };
    model.load_values(tensors)?;
    Ok(Checkpoint { model, optimizer, meta: header.meta })
}

fn describe_mismatch(want: &ModelConfig, got: &ModelConfig) -> String {
    let (a, b) = (serde_json::to_value(want).unwrap_or_default(), serde_json::to_value(got).unwrap_or_default());
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        let diffs: Vec<String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}: expected {v}, checkpoint has {}", b.get(k).cloned().unwrap_or_default()))
            .collect();
        if !diffs.is_empty() {
            return diffs.join("; ");
        }
    }
    "configurations differ".to_string()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

impl MfdpModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&Checkpoint { model: self.clone(), optimizer: None, meta: serde_json::Value::Null }, path)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        Ok(load_checkpoint(path, expected)?.model)
    }
}
