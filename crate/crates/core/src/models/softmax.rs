use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::models::arch::{seeded_rng, Architecture, Layer};
use crate::models::snapshot::{ModelKind, ModelSnapshot};
use crate::models::{run_network, INFERENCE_CHUNK};
use crate::nn::{Graph, NodeId, ParamSet, Tensor};

/// Shared trunk plus one linear head per task.
///
/// Trunk parameters come first in [`SoftmaxModel::params`]; each head then
/// appends a `[trunk_dim, width]` weight and a `[width]` bias.
#[derive(Clone, Debug)]
pub struct SoftmaxModel {
    trunk: Architecture,
    trunk_dim: usize,
    trunk_params: usize,
    params: ParamSet,
    heads: Vec<Vec<ClassId>>,
    seed: u64,
}

impl SoftmaxModel {
    pub fn new(trunk: Architecture, seed: u64) -> Result<Self> {
        let trunk_dim = trunk.output_dim()?;
        let params = trunk.init_params(&mut seeded_rng(seed, 0), "trunk")?;
        Ok(Self {
            trunk_dim,
            trunk_params: params.len(),
            trunk,
            params,
            heads: Vec::new(),
            seed,
        })
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], trunk_dim: usize, seed: u64) -> Result<Self> {
        Self::new(Architecture::mlp(input_dim, hidden, trunk_dim), seed)
    }

    pub fn trunk(&self) -> &Architecture {
        &self.trunk
    }

    /// Width of the layer feeding the heads.
    pub fn trunk_dim(&self) -> usize {
        self.trunk_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Global class ids served by each head, in head order.
    pub fn heads(&self) -> &[Vec<ClassId>] {
        &self.heads
    }

    /// Indices into [`SoftmaxModel::params`] of head `h`'s weight and bias.
    pub fn head_param_indices(&self, h: usize) -> (usize, usize) {
        let w = self.trunk_params + 2 * h;
        (w, w + 1)
    }

    /// Appends a freshly initialized head whose outputs map to `classes`.
    /// Existing parameters are left untouched.
    pub fn add_head(&mut self, classes: &[ClassId]) -> Result<usize> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("a head needs at least one class".into()));
        }
        let h = self.heads.len();
        let head = Architecture {
            input_dim: self.trunk_dim,
            layers: vec![Layer::Dense { out: classes.len() }],
        };
        let fresh = head.init_params(&mut seeded_rng(self.seed, 1 + h as u64), "")?;
        for (i, t) in fresh.tensors().iter().enumerate() {
            let part = if i == 0 { "weight" } else { "bias" };
            self.params.push(format!("head{h}.{part}"), t.clone());
        }
        self.heads.push(classes.to_vec());
        Ok(h)
    }

    /// Records the trunk output on `g`.
    pub fn trunk_forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.trunk.forward(g, &self.params, 0, x)
    }

    /// Records head `h`'s logits on top of trunk features.
    pub fn head_logits(&self, g: &mut Graph, features: NodeId, h: usize) -> Result<NodeId> {
        if h >= self.heads.len() {
            return Err(Error::State(format!("head {h} does not exist ({} heads)", self.heads.len())));
        }
        let (wi, bi) = self.head_param_indices(h);
        let (w, b) = (g.param(&self.params, wi), g.param(&self.params, bi));
        g.dense(features, w, b)
    }

    /// Trunk activations used for nearest-class-mean classification.
    pub fn penultimate_features(&self, batch: &Tensor) -> Result<Tensor> {
        run_network(&self.trunk, &self.params, batch, false)
    }

    /// Per sample, the concatenation of every head's softmax probabilities.
    pub fn head_probabilities(&self, batch: &Tensor) -> Result<Tensor> {
        if self.heads.is_empty() {
            return Err(Error::State("prediction needs at least one head".into()));
        }
        let (n, _) = batch.dims2()?;
        let total: usize = self.heads.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(n * total);
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let x = g.input(batch.select_rows(&rows)?);
            let f = self.trunk_forward(&mut g, x)?;
            let logits: Vec<NodeId> = (0..self.heads.len())
                .map(|h| self.head_logits(&mut g, f, h))
                .collect::<Result<_>>()?;
            for r in 0..rows.len() {
                for &l in &logits {
                    out.extend(softmax(g.value(l).row(r)));
                }
            }
            start = end;
        }
        Tensor::new(vec![n, total], out)
    }

    /// Global class id of the largest concatenated probability; ties go to
    /// the earliest output.
    pub fn predict_multihead(&self, batch: &Tensor) -> Result<Vec<ClassId>> {
        let probs = self.head_probabilities(batch)?;
        let classes: Vec<ClassId> = self.heads.iter().flatten().copied().collect();
        Ok(probs.rows().map(|p| classes[argmax(p)]).collect())
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Softmax {
            heads: self.heads.clone(),
        }
    }

    pub fn snapshot(&self, task: usize) -> ModelSnapshot {
        ModelSnapshot::new(task, self.trunk.clone(), self.kind(), &self.params)
    }

    /// Makes parameters and heads bit-identical to `snap`.
    pub fn restore(&mut self, snap: &ModelSnapshot) -> Result<()> {
        let ModelKind::Softmax { heads } = snap.kind() else {
            return Err(Error::Architecture("snapshot holds an embedding network".into()));
        };
        if snap.architecture() != &self.trunk {
            return Err(Error::Architecture("snapshot trunk differs from this model".into()));
        }
        self.params = snap.params().clone();
        self.heads = heads.clone();
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    logits.iter().map(move |l| (l - max).exp() / sum)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
