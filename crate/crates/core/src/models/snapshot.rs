use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::models::arch::Architecture;
use crate::models::run_network;
use crate::nn::{ParamSet, Tensor};

/// What sits on top of the shared layer stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// L2-normalized embedding of width `embedding_dim`.
    Embedding { embedding_dim: usize },
    /// Trunk followed by one linear head per task; each head lists the
    /// global class ids of its outputs.
    Softmax { heads: Vec<Vec<ClassId>> },
}

/// Frozen deep copy of a model's parameters, tagged with the task after
/// which it was taken. There is no way to mutate one once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    task: usize,
    architecture: Architecture,
    kind: ModelKind,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    task: usize,
    architecture: Architecture,
    #[serde(flatten)]
    kind: ModelKind,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl ModelSnapshot {
    pub(crate) fn new(task: usize, architecture: Architecture, kind: ModelKind, params: &ParamSet) -> Self {
        Self {
            task,
            architecture,
            kind,
            params: params.detached(),
        }
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Embeddings produced by the frozen parameters (normalized for
    /// embedding models, raw trunk features for softmax models).
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let normalize = matches!(self.kind, ModelKind::Embedding { .. });
        run_network(&self.architecture, &self.params, batch, normalize)
    }

    /// Writes `<stem>.bin` (every tensor, in order, as little-endian f64) and
    /// `<stem>.json` describing the architecture and tensor shapes.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sidecar = Sidecar {
            task: self.task,
            architecture: self.architecture.clone(),
            kind: self.kind.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(self.params.numel() * 8);
        for t in self.params.tensors() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin_path = dir.join(format!("{stem}.bin"));
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let bin_path = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let expected: usize = sidecar.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if bytes.len() != expected * 8 {
            return Err(Error::Architecture(format!(
                "{} holds {} bytes, sidecar describes {} floats",
                bin_path.display(),
                bytes.len(),
                expected
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut params = ParamSet::new();
        for entry in sidecar.tensors {
            let n = entry.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            params.push(entry.name, Tensor::new(entry.shape, data)?);
        }
        Ok(Self {
            task: sidecar.task,
            architecture: sidecar.architecture,
            kind: sidecar.kind,
            params,
        })
    }
}
