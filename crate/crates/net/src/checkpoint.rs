//! Single-file tensor container: magic, manifest length, JSON manifest,
//! little-endian `f32` payload.

use std::collections::BTreeMap;
use std::path::Path;

use imt_autograd::Tensor;
use imt_core::io::write_atomic;
use imt_core::{ImtError, Result};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"IMTCKPT1";
const PREFIX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub tensor: Tensor<f32>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    /// What the tensors parameterize, e.g. `"imt-net"` or `"feature-extractor"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub init_seed: u64,
    pub tensors: BTreeMap<String, StoredTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    init_seed: u64,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    /// Byte offset from the start of the payload.
    offset: u64,
    shape: Vec<usize>,
    dtype: String,
    trainable: bool,
}

fn format_err(offset: usize, reason: impl Into<String>) -> ImtError {
    ImtError::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                offset: payload.len() as u64,
                shape: t.tensor.shape().to_vec(),
                dtype: "f32".into(),
                trainable: t.trainable,
            });
            for v in t.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            kind: self.kind.clone(),
            config: self.config.clone(),
            init_seed: self.init_seed,
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX || &bytes[..8] != MAGIC {
            return Err(format_err(0, "not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(PREFIX))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err(8, format!("manifest length {len} exceeds file")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[PREFIX..end])
            .map_err(|e| format_err(PREFIX + e.column(), format!("manifest: {e}")))?;
        let payload = &bytes[end..];
        let mut tensors = BTreeMap::new();
        let mut expected_end = 0usize;
        for entry in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(format_err(end, format!("tensor '{}': unsupported dtype {}", entry.name, entry.dtype)));
            }
            let n = entry
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format_err(end, format!("tensor '{}': shape overflow", entry.name)))?;
            let start = entry.offset as usize;
            let stop = start
                .checked_add(n * 4)
                .filter(|&s| s <= payload.len())
                .ok_or_else(|| format_err(end + start, format!("tensor '{}' runs past end of payload", entry.name)))?;
            let data: Vec<f32> = payload[start..stop]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(format_err(end + start + 4 * i, format!("tensor '{}' has a non-finite value", entry.name)));
            }
            expected_end = expected_end.max(stop);
            let stored = StoredTensor {
                tensor: Tensor::new(entry.shape, data),
                trainable: entry.trainable,
            };
            if tensors.insert(entry.name.clone(), stored).is_some() {
                return Err(format_err(PREFIX, format!("duplicate tensor '{}'", entry.name)));
            }
        }
        if expected_end != payload.len() {
            return Err(format_err(end + expected_end, "trailing bytes after payload"));
        }
        Ok(Self {
            kind: manifest.kind,
            config: manifest.config,
            init_seed: manifest.init_seed,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| ImtError::io(path, e))?;
        Self::decode(&bytes)
    }
}
