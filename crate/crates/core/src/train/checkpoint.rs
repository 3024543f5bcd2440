//! Checkpoint files: `SPTR`, u32-LE version, u32-LE header length, a JSON
//! header (model config, training state, tensor directory) and the tensors
//! as consecutive f32-LE payloads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore, SpecTr};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPTR";
pub const VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Progress of a training run at the moment of saving.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub best_dsc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    state: TrainState,
    adam: Option<AdamHeader>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    t: u64,
}

/// Everything needed to continue training or to run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SpecTr<f32>,
    pub adam: Option<Adam<f32>>,
    pub state: TrainState,
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, msg: msg.into() }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut tensors: Vec<(String, &[usize], &[f32])> =
            params.iter().map(|(n, t)| (n.to_string(), t.shape(), t.data())).collect();
        if let Some(adam) = &self.adam {
            for (prefix, bufs) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
                for ((n, t), buf) in params.iter().zip(bufs) {
                    tensors.push((format!("{prefix}{n}"), t.shape(), buf));
                }
            }
        }
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry { name: name.clone(), shape: shape.to_vec(), offset };
                offset += 4 * data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            model: self.model.config().clone(),
            state: self.state.clone(),
            adam: self.adam.as_ref().map(|a| AdamHeader { config: a.config, t: a.t }),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(format_err(bytes.len(), "file ends inside the preamble"));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err(0, "bad magic, expected SPTR"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len());
        let Some(start) = body else {
            return Err(format_err(bytes.len(), format!("truncated header of {hlen} bytes")));
        };
        let header: Header =
            serde_json::from_slice(&bytes[12..start]).map_err(|e| format_err(12, format!("bad header: {e}")))?;
        let payload = &bytes[start..];
        let read = |e: &TensorEntry| -> Result<Tensor<f32>> {
            let n: usize = e.shape.iter().product();
            let lo = e.offset as usize;
            let hi = lo + 4 * n;
            let raw = payload
                .get(lo..hi)
                .ok_or_else(|| format_err(start + payload.len(), format!("tensor {} truncated", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Tensor::new(e.shape.clone(), data)
        };
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for e in &header.tensors {
            let t = read(e)?;
            if e.name.starts_with(ADAM_M) {
                m.push(t.into_data());
            } else if e.name.starts_with(ADAM_V) {
                v.push(t.into_data());
            } else {
                params.insert(e.name.clone(), t)?;
            }
        }
        let expected: u64 = header.tensors.iter().map(|e| 4 * e.shape.iter().product::<usize>() as u64).sum();
        if payload.len() as u64 != expected {
            return Err(format_err(start + expected as usize, "trailing bytes after the last tensor"));
        }
        let model = SpecTr::from_params(header.model, params)?;
        let adam = match header.adam {
            Some(a) => {
                let sizes_match = |bufs: &[Vec<f32>]| {
                    bufs.len() == model.params().len()
                        && bufs.iter().zip(model.params().tensors()).all(|(b, t)| b.len() == t.numel())
                };
                if !sizes_match(&m) || !sizes_match(&v) {
                    return Err(format_err(12, "optimizer state does not cover every parameter"));
                }
                Some(Adam { config: a.config, t: a.t, m, v })
            }
            None => None,
        };
        Ok(Self { model, adam, state: header.state })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.encode()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
