use rand::seq::SliceRandom;

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::harness::config::{Method, MethodConfig, ModelConfig};
use crate::harness::record::TaskStats;
use crate::losses::{
    combined_loss, cross_entropy_loss, lwf_align_loss, mine_triplets, quadratic_penalty, triplet_loss, ImportanceMap,
};
use crate::models::{seeded_rng, Architecture, EmbeddingModel, ModelSnapshot, SoftmaxModel};
use crate::nn::{Graph, NodeId, Optimizer, Tensor};

/// The network a method trains.
#[derive(Clone, Debug)]
pub enum Learner {
    Embedding(EmbeddingModel),
    Softmax(SoftmaxModel),
}

impl Learner {
    /// Fresh network for `method` on inputs of width `input_dim`.
    pub fn new(method: Method, input_dim: usize, model: &ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::mlp(input_dim, &model.hidden, model.embedding_dim);
        Ok(if method.is_softmax() {
            Learner::Softmax(SoftmaxModel::new(arch, seed)?)
        } else {
            Learner::Embedding(EmbeddingModel::new(arch, seed)?)
        })
    }

    pub fn snapshot(&self, task: usize) -> ModelSnapshot {
        match self {
            Learner::Embedding(m) => m.snapshot(task),
            Learner::Softmax(m) => m.snapshot(task),
        }
    }

    pub fn embedding(&self) -> Option<&EmbeddingModel> {
        match self {
            Learner::Embedding(m) => Some(m),
            Learner::Softmax(_) => None,
        }
    }

    pub fn softmax(&self) -> Option<&SoftmaxModel> {
        match self {
            Learner::Softmax(m) => Some(m),
            Learner::Embedding(_) => None,
        }
    }

    /// Features used for nearest-class-mean classification: normalized
    /// embeddings, or trunk activations for softmax models.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        match self {
            Learner::Embedding(m) => m.embed(batch),
            Learner::Softmax(m) => m.penultimate_features(batch),
        }
    }
}

/// What the current task's loss is anchored to.
#[derive(Clone, Copy, Debug)]
pub struct Anchor<'a> {
    /// Network as it was before this task.
    pub snapshot: &'a ModelSnapshot,
    /// Per-parameter weights for the quadratic penalty.
    pub importance: Option<&'a ImportanceMap>,
}

/// Task index used for pretraining on held-out classes.
pub const PRETRAIN_TASK: usize = usize::MAX >> 1;

fn stage(task: usize) -> String {
    if task == PRETRAIN_TASK {
        "pretraining".into()
    } else {
        format!("task {task}")
    }
}

/// Trains `learner` on one task for `cfg.epochs` epochs.
///
/// Embedding networks minimise the triplet loss plus, for the regularized
/// methods, `γ` times the regularizer against `anchor`. Softmax models add a
/// head for `classes` if needed and minimise cross-entropy on that head.
/// Mini-batches are reshuffled every epoch from a stream derived from
/// `cfg.seed` and `task`; batches without a valid triplet are skipped.
pub fn train_task(
    learner: &mut Learner,
    task: usize,
    data: &LabeledDataset,
    classes: &[ClassId],
    cfg: &MethodConfig,
    anchor: Option<Anchor<'_>>,
) -> Result<TaskStats> {
    if data.is_empty() {
        return Err(Error::Training(format!("{} has no training data", stage(task))));
    }
    let mut stats = TaskStats {
        task,
        steps: 0,
        skipped_batches: 0,
        final_loss: None,
        regularizer_at_start: None,
    };
    if let Learner::Softmax(m) = learner {
        if m.num_heads() <= task {
            m.add_head(classes)?;
        }
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = seeded_rng(cfg.seed, 0x1000 + task as u64);
    let mut mining_rng = seeded_rng(cfg.seed, 0x2000 + task as u64);
    let gamma = cfg.effective_gamma();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut loss_batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<ClassId> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let x = data.batch(chunk);
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let loss = match learner {
                Learner::Softmax(m) => {
                    let local: Vec<usize> = labels
                        .iter()
                        .map(|l| {
                            classes
                                .iter()
                                .position(|c| c == l)
                                .ok_or_else(|| Error::Training(format!("label {l} is not part of {}", stage(task))))
                        })
                        .collect::<Result<_>>()?;
                    let f = m.trunk_forward(&mut g, xi)?;
                    let logits = m.head_logits(&mut g, f, task)?;
                    cross_entropy_loss(&mut g, logits, &local)?
                }
                Learner::Embedding(m) => {
                    let z = m.forward(&mut g, xi)?;
                    let triplets = mine_triplets(&labels, g.value(z), cfg.mining, cfg.margin, &mut mining_rng)?;
                    if triplets.is_empty() {
                        stats.skipped_batches += 1;
                        continue;
                    }
                    let metric = triplet_loss(&mut g, z, &triplets)?;
                    match regularizer(&mut g, m, cfg.method, anchor, z, &x)? {
                        Some(reg) => {
                            if stats.regularizer_at_start.is_none() {
                                stats.regularizer_at_start = Some(g.value(reg).item()?);
                            }
                            combined_loss(&mut g, metric, reg, gamma)?
                        }
                        None => metric,
                    }
                }
            };
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Training(format!("loss became {value} in {}, epoch {epoch}", stage(task))));
            }
            let params = match learner {
                Learner::Embedding(m) => m.params_mut(),
                Learner::Softmax(m) => m.params_mut(),
            };
            params.zero_grad();
            g.backward(loss, params)?;
            opt.step(params)?;
            stats.steps += 1;
            loss_sum += value;
            loss_batches += 1;
        }
        if epoch + 1 == cfg.epochs && loss_batches > 0 {
            stats.final_loss = Some(loss_sum / loss_batches as f64);
        }
    }
    if stats.steps == 0 {
        return Err(Error::Training(format!(
            "{}: no mini-batch contained a valid triplet in any epoch",
            stage(task)
        )));
    }
    Ok(stats)
}

fn regularizer(
    g: &mut Graph,
    model: &EmbeddingModel,
    method: Method,
    anchor: Option<Anchor<'_>>,
    z: NodeId,
    x: &Tensor,
) -> Result<Option<NodeId>> {
    let Some(anchor) = anchor else {
        return Ok(None);
    };
    match method {
        Method::ELwf => Ok(Some(lwf_align_loss(g, model, anchor.snapshot, z, x)?)),
        Method::EEwc | Method::EMas => {
            let importance = anchor
                .importance
                .ok_or_else(|| Error::State(format!("{method} needs an importance map from the previous task")))?;
            Ok(Some(quadratic_penalty(g, model.params(), anchor.snapshot, importance)?))
        }
        _ => Ok(None),
    }
}
