//! Checkpoint files.
//!
//! Layout: a text header (a version line, `meta key=value` lines, then one
//! `tensor name rank extents...` line per tensor) closed by an empty line,
//! followed by the tensors' values as little-endian `f32`, concatenated in
//! header order.

use std::fs;
use std::path::Path;

use autodiff::Tensor;
use thiserror::Error;

use crate::equitab::ModelConfig;
use crate::error::Result;
use crate::model::{Model, ModelKind};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "equitab-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint header at line {line}: {detail}")]
    Header { line: usize, detail: String },
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("checkpoint declares {declared} tensors but lists {found}")]
    TensorCount { declared: usize, found: usize },
    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint payload has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("checkpoint is missing meta key {0:?}")]
    MissingMeta(String),
    #[error("checkpoint meta {key}={value:?} is invalid")]
    BadMeta { key: String, value: String },
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Ordered `key=value` pairs echoing the run configuration and progress.
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn require<V: std::str::FromStr>(&self, key: &str) -> Result<V, CheckpointError> {
        let raw = self.meta(key).ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))?;
        raw.parse().map_err(|_| CheckpointError::BadMeta { key: key.to_string(), value: raw.to_string() })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
        header.push_str(&format!("meta tensors={}\n", self.tensors.len()));
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            header.push_str(&format!("tensor {name} {}", t.rank()));
            for e in t.shape() {
                header.push_str(&format!(" {e}"));
            }
            header.push('\n');
        }
        header.push('\n');
        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| CheckpointError::Header { line: 0, detail: "no blank line closes the header".into() })?;
        let header = std::str::from_utf8(&bytes[..end + 1])
            .map_err(|_| CheckpointError::Header { line: 0, detail: "header is not UTF-8".into() })?;
        let payload = &bytes[end + 2..];
        let mut lines = header.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| CheckpointError::Header { line: 1, detail: "empty header".into() })?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(CheckpointError::Version { found: v.to_string() }),
            _ => return Err(CheckpointError::Header { line: 1, detail: format!("unexpected first line {first:?}") }),
        }
        let mut declared = None;
        let mut meta = Vec::new();
        let mut shapes = Vec::new();
        for (i, line) in lines {
            let bad = |detail: &str| CheckpointError::Header { line: i + 1, detail: format!("{detail}: {line:?}") };
            if let Some(kv) = line.strip_prefix("meta ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad("meta line without '='"))?;
                if k == "tensors" {
                    declared = Some(v.parse::<usize>().map_err(|_| bad("bad tensor count"))?);
                } else {
                    meta.push((k.to_string(), v.to_string()));
                }
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split(' ');
                let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| bad("tensor without a name"))?;
                let rank: usize = parts.next().and_then(|r| r.parse().ok()).ok_or_else(|| bad("bad rank"))?;
                let shape: Vec<usize> = parts.map(|e| e.parse().map_err(|_| bad("bad extent"))).collect::<Result<_, _>>()?;
                if shape.len() != rank {
                    return Err(bad("rank does not match the number of extents"));
                }
                shapes.push((name.to_string(), shape));
            } else {
                return Err(bad("unrecognised header line"));
            }
        }
        let declared = declared.ok_or_else(|| CheckpointError::MissingMeta("tensors".into()))?;
        if declared != shapes.len() {
            return Err(CheckpointError::TensorCount { declared, found: shapes.len() });
        }
        let expected: usize = shapes.iter().map(|(_, s)| autodiff::numel(s) * 4).sum();
        if payload.len() < expected {
            return Err(CheckpointError::Truncated { expected, found: payload.len() });
        }
        if payload.len() > expected {
            return Err(CheckpointError::TrailingBytes { extra: payload.len() - expected });
        }
        let mut offset = 0;
        let tensors = shapes
            .into_iter()
            .map(|(name, shape)| {
                let n = autodiff::numel(&shape);
                let data = payload[offset..offset + 4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                offset += 4 * n;
                (name, Tensor::new(shape, data).expect("sized from header"))
            })
            .collect();
        Ok(Checkpoint { meta, tensors })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Meta keys describing a model's architecture.
pub fn model_meta(model: &Model<f32>) -> Vec<(String, String)> {
    let c = model.config();
    let mut meta = vec![
        ("model".to_string(), model.kind().name().to_string()),
        ("d".to_string(), c.d.to_string()),
        ("n_layers".to_string(), c.n_layers.to_string()),
        ("n_heads".to_string(), c.n_heads.to_string()),
        ("hidden".to_string(), c.hidden.to_string()),
        ("p_max".to_string(), c.p_max.to_string()),
        ("decoder_hidden".to_string(), c.decoder_hidden.to_string()),
    ];
    if let Some(q) = model.q_max() {
        meta.push(("q_max".to_string(), q.to_string()));
    }
    meta
}

/// Checkpoint holding only a model's parameters.
pub fn model_checkpoint(model: &Model<f32>) -> Checkpoint {
    Checkpoint {
        meta: model_meta(model),
        tensors: model.params().names().iter().cloned().zip(model.params().tensors().iter().cloned()).collect(),
    }
}

/// Rebuilds the model a checkpoint describes and loads its parameters.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model<f32>> {
    let kind_raw: String = ckpt.require("model")?;
    let kind = ModelKind::parse(&kind_raw)?;
    let config = ModelConfig {
        d: ckpt.require("d")?,
        n_layers: ckpt.require("n_layers")?,
        n_heads: ckpt.require("n_heads")?,
        hidden: ckpt.require("hidden")?,
        p_max: ckpt.require("p_max")?,
        decoder_hidden: ckpt.require("decoder_hidden")?,
    };
    let q_max = match kind {
        ModelKind::Baseline => ckpt.require("q_max")?,
        ModelKind::EquiTab => 0,
    };
    let mut model = Model::<f32>::new(kind, config, q_max.max(2), 0)?;
    let params = model.params_mut();
    for i in 0..params.len() {
        let name = params.names()[i].clone();
        let src = ckpt.tensor(&name).ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if src.shape() != params.tensors()[i].shape() {
            return Err(CheckpointError::BadMeta { key: name, value: format!("shape {:?}", src.shape()) }.into());
        }
        params.tensors_mut()[i] = src.clone();
    }
    Ok(model)
}
