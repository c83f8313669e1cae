use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Tensor;

const MAGIC: &str = "HYPERVQ-CHECKPOINT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("missing tensor `{0}`")]
    Missing(String),
}

/// Named tensors plus free-form string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    metadata: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors, metadata: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    /// Magic line, manifest length line, JSON manifest, then little-endian `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset, len: t.data().len() };
                offset += 8 * t.data().len();
                e
            })
            .collect();
        let manifest =
            serde_json::to_string(&Manifest { metadata: self.metadata.clone(), tensors }).expect("serializable");
        let mut out = format!("{MAGIC}\n{}\n{manifest}\n", manifest.len()).into_bytes();
        out.reserve(offset);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let bad = |m: &str| CheckpointError::Format(m.to_string());
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        if lines.next() != Some(MAGIC.as_bytes()) {
            return Err(bad("bad magic line"));
        }
        let len: usize = std::str::from_utf8(lines.next().ok_or_else(|| bad("missing manifest length"))?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("invalid manifest length"))?;
        let rest = lines.next().ok_or_else(|| bad("missing manifest"))?;
        if rest.len() < len + 1 || rest[len] != b'\n' {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..len])?;
        let payload = &rest[len + 1..];
        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0;
        for e in manifest.tensors {
            let end = e.offset + 8 * e.len;
            if e.offset != expected_offset || end > payload.len() || e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Format(format!("inconsistent entry `{}`", e.name)));
            }
            expected_offset = end;
            let data = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| CheckpointError::Format(err.to_string()))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(CheckpointError::Format(format!("duplicate tensor `{}`", e.name)));
            }
        }
        if expected_offset != payload.len() {
            return Err(bad("trailing payload bytes"));
        }
        Ok(Self { tensors, metadata: manifest.metadata })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}
