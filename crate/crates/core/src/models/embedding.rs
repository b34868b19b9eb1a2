use crate::error::{Error, Result};
use crate::models::arch::{seeded_rng, Architecture};
use crate::models::snapshot::{ModelKind, ModelSnapshot};
use crate::models::run_network;
use crate::nn::{Graph, NodeId, ParamSet, Tensor};

/// Network whose output rows are L2-normalized embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    arch: Architecture,
    params: ParamSet,
    embedding_dim: usize,
}

impl EmbeddingModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let embedding_dim = arch.output_dim()?;
        if embedding_dim == 0 {
            return Err(Error::Architecture("embedding dimension must be positive".into()));
        }
        let params = arch.init_params(&mut seeded_rng(seed, 0), "layer")?;
        Ok(Self {
            arch,
            params,
            embedding_dim,
        })
    }

    /// `input → hidden… (ReLU) → embedding_dim`, normalized.
    pub fn mlp(input_dim: usize, hidden: &[usize], embedding_dim: usize, seed: u64) -> Result<Self> {
        Self::new(Architecture::mlp(input_dim, hidden, embedding_dim), seed)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the network output before normalization.
    pub fn raw_output(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.arch.forward(g, &self.params, 0, x)
    }

    /// Records the normalized embedding `z = F(x)`.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let raw = self.raw_output(g, x)?;
        g.l2_normalize(raw, 1)
    }

    /// `[batch, embedding_dim]` unit-norm embeddings, outside any graph.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        run_network(&self.arch, &self.params, batch, true)
    }

    /// Pre-normalization output, outside any graph.
    pub fn raw(&self, batch: &Tensor) -> Result<Tensor> {
        run_network(&self.arch, &self.params, batch, false)
    }

    pub fn snapshot(&self, task: usize) -> ModelSnapshot {
        ModelSnapshot::new(task, self.arch.clone(), self.kind(), &self.params)
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Embedding {
            embedding_dim: self.embedding_dim,
        }
    }

    /// Makes the parameters bit-identical to `snap`.
    pub fn restore(&mut self, snap: &ModelSnapshot) -> Result<()> {
        if snap.architecture() != &self.arch || snap.kind() != &self.kind() || !snap.params().same_layout(&self.params) {
            return Err(Error::Architecture(
                "snapshot was taken from a different embedding network".into(),
            ));
        }
        self.params = snap.params().clone();
        Ok(())
    }

    /// Rebuilds a model from a snapshot of an embedding network.
    pub fn from_snapshot(snap: &ModelSnapshot) -> Result<Self> {
        match snap.kind() {
            ModelKind::Embedding { embedding_dim } => Ok(Self {
                arch: snap.architecture().clone(),
                params: snap.params().clone(),
                embedding_dim: *embedding_dim,
            }),
            ModelKind::Softmax { .. } => Err(Error::Architecture(
                "snapshot holds a softmax classifier, not an embedding network".into(),
            )),
        }
    }

    /// Same layer stack and parameter layout.
    pub fn compatible_with(&self, snap: &ModelSnapshot) -> bool {
        snap.architecture() == &self.arch && snap.params().same_layout(&self.params)
    }
}
