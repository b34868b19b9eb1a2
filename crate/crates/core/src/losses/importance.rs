use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{mine_triplets, triplet_loss, MiningStrategy, DEFAULT_MARGIN};
use crate::models::{seeded_rng, EmbeddingModel};
use crate::nn::{Graph, ParamSet, Tensor};

use rand::seq::SliceRandom;

/// Which estimator produced an [`ImportanceMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceKind {
    Fisher,
    Mas,
}

/// Non-negative per-parameter weights laid out like the model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    kind: ImportanceKind,
    weights: ParamSet,
}

impl ImportanceMap {
    pub fn new(kind: ImportanceKind, weights: ParamSet) -> Result<Self> {
        for (name, t) in weights.iter() {
            if let Some(bad) = t.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Estimation(format!("{name} has invalid importance {bad}")));
            }
        }
        Ok(Self {
            kind,
            weights: weights.detached(),
        })
    }

    /// Every weight set to `value`, laid out like `params`.
    pub fn uniform(kind: ImportanceKind, params: &ParamSet, value: f64) -> Result<Self> {
        let mut weights = params.detached();
        for t in weights.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
        Self::new(kind, weights)
    }

    pub fn kind(&self) -> ImportanceKind {
        self.kind
    }

    pub fn weights(&self) -> &ParamSet {
        &self.weights
    }

    /// Folds a newer estimate into this one as the running mean over
    /// `previous_count + 1` estimates.
    pub fn merge_running_mean(&mut self, newer: &ImportanceMap, previous_count: usize) -> Result<()> {
        if newer.kind != self.kind || !newer.weights.same_layout(&self.weights) {
            return Err(Error::Shape("importance maps differ in kind or layout".into()));
        }
        let k = previous_count as f64;
        for (old, new) in self.weights.tensors_mut().iter_mut().zip(newer.weights.tensors()) {
            for (o, n) in old.data_mut().iter_mut().zip(new.data()) {
                *o = (*o * k + n) / (k + 1.0);
            }
        }
        Ok(())
    }

    /// Sum of all weights.
    pub fn total(&self) -> f64 {
        self.weights.tensors().iter().flat_map(|t| t.data()).sum()
    }
}

/// Gradient signal squared by [`estimate_fisher`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherVariant {
    /// Squared mini-batch gradients of the triplet loss.
    #[default]
    TripletLoss,
    /// Squared per-sample gradients of the pre-normalization `‖F(x)‖²`.
    OutputNorm,
}

/// Settings for the empirical Fisher estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    pub batch_size: usize,
    pub margin: f64,
    pub mining: MiningStrategy,
    pub variant: FisherVariant,
    pub seed: u64,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            margin: DEFAULT_MARGIN,
            mining: MiningStrategy::Semihard,
            variant: FisherVariant::TripletLoss,
            seed: 0,
        }
    }
}

/// Sample indices sorted by feature values, then label. Estimators walk
/// data in this order so their output does not depend on input order.
pub(crate) fn canonical_order(data: &LabeledDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| {
        data.sample(a)
            .iter()
            .zip(data.sample(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(data.labels()[a].cmp(&data.labels()[b]))
    });
    idx
}

/// Diagonal empirical Fisher of an embedding network over `data`.
///
/// With [`FisherVariant::TripletLoss`] the data is put in canonical order,
/// shuffled with `config.seed`, cut into mini-batches, and the squared
/// triplet-loss gradient of each batch with at least one triplet is averaged.
pub fn estimate_fisher(model: &EmbeddingModel, data: &LabeledDataset, config: &FisherConfig) -> Result<ImportanceMap> {
    if data.is_empty() {
        return Err(Error::Estimation("cannot estimate importance on an empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if config.variant == FisherVariant::OutputNorm {
        return per_sample_output_norm(model, data, ImportanceKind::Fisher, |g| g * g);
    }
    let mut order = canonical_order(data);
    order.shuffle(&mut seeded_rng(config.seed, 0));
    let mut mining_rng = seeded_rng(config.seed, 1);
    let mut params = model.params().detached();
    let mut acc = zeros_like(&params);
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
        let x = data.batch(chunk);
        let mut g = Graph::new();
        let xi = g.input(x);
        let z = model.forward(&mut g, xi)?;
        let triplets = mine_triplets(&labels, g.value(z), config.mining, config.margin, &mut mining_rng)?;
        if triplets.is_empty() {
            continue;
        }
        let loss = triplet_loss(&mut g, z, &triplets)?;
        params.zero_grad();
        g.backward(loss, &mut params)?;
        add_transformed(&mut acc, &params, |v| v * v);
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Estimation("no mini-batch produced a valid triplet".into()));
    }
    scale(&mut acc, 1.0 / batches as f64);
    ImportanceMap::new(ImportanceKind::Fisher, acc)
}

/// Mean over samples of `|∂‖F(x)‖²/∂θ|`, with `F` the pre-normalization
/// output.
pub fn estimate_mas_importance(model: &EmbeddingModel, data: &LabeledDataset) -> Result<ImportanceMap> {
    if data.is_empty() {
        return Err(Error::Estimation("cannot estimate importance on an empty dataset".into()));
    }
    per_sample_output_norm(model, data, ImportanceKind::Mas, f64::abs)
}

fn per_sample_output_norm(
    model: &EmbeddingModel,
    data: &LabeledDataset,
    kind: ImportanceKind,
    transform: impl Fn(f64) -> f64,
) -> Result<ImportanceMap> {
    let mut params = model.params().detached();
    let mut acc = zeros_like(&params);
    for i in canonical_order(data) {
        let mut g = Graph::new();
        let x = g.input(data.batch(&[i]));
        let raw = model.raw_output(&mut g, x)?;
        let sq = g.row_sum_squares(raw)?;
        let loss = g.sum(sq);
        params.zero_grad();
        g.backward(loss, &mut params)?;
        add_transformed(&mut acc, &params, &transform);
    }
    scale(&mut acc, 1.0 / data.len() as f64);
    ImportanceMap::new(kind, acc)
}

fn zeros_like(params: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        out.push(name, Tensor::zeros(t.shape()));
    }
    out
}

fn add_transformed(acc: &mut ParamSet, params: &ParamSet, f: impl Fn(f64) -> f64) {
    for (a, p) in acc.tensors_mut().iter_mut().zip(params.tensors()) {
        let grad = p.grad().expect("backward allocates every gradient");
        for (x, g) in a.data_mut().iter_mut().zip(grad) {
            *x += f(*g);
        }
    }
}

fn scale(acc: &mut ParamSet, c: f64) {
    for t in acc.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= c);
    }
}
