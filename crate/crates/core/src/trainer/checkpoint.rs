//! `GCCK` checkpoint files.
//!
//! ```text
//! magic "GCCK" | version u32 LE | header_len u32 LE | JSON header (header_len bytes)
//! | parameter data: f32 LE, tensors in header order
//! | [optimizer first moments, then second moments, same order]  if header.optimizer_state
//! ```
//!
//! The JSON header carries `model_kind`, `model_config`, `tensors`
//! (`[{name, shape}]`), `optimizer_state`, `step_count` and `meta`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, ModelConfig, ModelKind};
use crate::nn_core::{ParamTensor, ParameterSet, Shape};
use crate::optim::AdamWState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training context stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_auroc: f64,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_kind: ModelKind,
    model_config: ModelConfig,
    tensors: Vec<TensorEntry>,
    optimizer_state: bool,
    step_count: u64,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: ParameterSet<f32>,
    pub optimizer: Option<AdamWState<f32>>,
    pub meta: CheckpointMeta,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(
    arch: &Architecture,
    params: &ParameterSet<f32>,
    optimizer: Option<&AdamWState<f32>>,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    arch.check_params(params)?;
    if let Some(state) = optimizer {
        if !state.is_aligned(params) {
            return Err(Error::shape(
                "save_checkpoint",
                "optimizer state does not match the parameters",
            ));
        }
    }
    let header = Header {
        model_kind: arch.kind,
        model_config: arch.config.clone(),
        tensors: params
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.dims(),
            })
            .collect(),
        optimizer_state: optimizer.is_some(),
        step_count: optimizer.map_or(0, |s| s.step_count),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let scalars = params.num_scalars() * if optimizer.is_some() { 3 } else { 1 };

    let mut out = Vec::with_capacity(12 + json.len() + 4 * scalars);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.iter() {
        push_f32s(&mut out, &t.values);
    }
    if let Some(state) = optimizer {
        state.m.iter().for_each(|m| push_f32s(&mut out, m));
        state.v.iter().for_each(|v| push_f32s(&mut out, v));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

    let arch = Architecture::new(header.model_kind, header.model_config)
        .map_err(|e| Error::CorruptCheckpoint(format!("model config: {e}")))?;
    let mut params = ParameterSet::new();
    for entry in &header.tensors {
        let shape = Shape::from_dims(&entry.shape).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("{}: bad shape {:?}", entry.name, entry.shape))
        })?;
        let values = r.f32s(shape.len(), &entry.name)?;
        params.push(ParamTensor::with_values(entry.name.clone(), shape, values)?)?;
    }
    arch.check_params(&params)
        .map_err(|e| Error::CorruptCheckpoint(format!("tensor table: {e}")))?;

    let optimizer = if header.optimizer_state {
        let mut read_all = |what: &str| -> Result<Vec<Vec<f32>>> {
            params.iter().map(|t| r.f32s(t.len(), what)).collect()
        };
        let m = read_all("optimizer first moments")?;
        let v = read_all("optimizer second moments")?;
        Some(AdamWState {
            m,
            v,
            step_count: header.step_count,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::TrailingBytes {
            trailing: bytes.len() - r.pos,
        });
    }
    Ok(Checkpoint {
        arch,
        params,
        optimizer,
        meta: header.meta,
    })
}

/// Writes through a temporary sibling file and renames, so a crash never
/// leaves a half-written checkpoint at `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    arch: &Architecture,
    params: &ParameterSet<f32>,
    optimizer: Option<&AdamWState<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(arch, params, optimizer, meta)?;
    let tmp = path.with_extension("gcck.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and requires it to match `expected` exactly.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &Architecture) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.arch != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {} {:?}, expected {} {:?}",
            ck.arch.kind, ck.arch.config, expected.kind, expected.config
        )));
    }
    Ok(ck)
}
