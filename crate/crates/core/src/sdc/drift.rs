use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{EmbeddingModel, ModelSnapshot};
use crate::nn::Tensor;
use crate::sdc::book::{compute_prototypes, PrototypeBook};

/// Displacement of every current-task sample between the network before
/// and after training on the task.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField {
    positions: Tensor,
    displacements: Tensor,
    labels: Vec<ClassId>,
}

impl DriftField {
    /// Field from embeddings of the same samples under the previous and
    /// current network.
    pub fn from_endpoints(before: Tensor, after: &Tensor, labels: Vec<ClassId>) -> Result<Self> {
        if before.shape() != after.shape() {
            return Err(Error::Shape(format!(
                "endpoint embeddings differ in shape: {:?} vs {:?}",
                before.shape(),
                after.shape()
            )));
        }
        let (n, _) = before.dims2()?;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} drift vectors", labels.len())));
        }
        let diff = after.data().iter().zip(before.data()).map(|(a, b)| a - b).collect();
        let displacements = Tensor::new(before.shape().to_vec(), diff)?;
        Ok(Self {
            positions: before,
            displacements,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.shape()[1]
    }

    /// Embeddings under the previous network, `[n, d]`.
    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// `z^t − z^{t−1}` per sample, `[n, d]`.
    pub fn displacements(&self) -> &Tensor {
        &self.displacements
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    /// Mean Euclidean length of the displacement vectors.
    pub fn mean_norm(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.displacements
            .rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Embeds `data` with the frozen previous network and the current one.
pub fn collect_drift(previous: &ModelSnapshot, current: &EmbeddingModel, data: &LabeledDataset) -> Result<DriftField> {
    if !current.compatible_with(previous) {
        return Err(Error::Architecture("drift needs two networks with one architecture".into()));
    }
    let x = data.to_tensor();
    let before = previous.embed(&x)?;
    let after = current.embed(&x)?;
    DriftField::from_endpoints(before, &after, data.labels().to_vec())
}

/// Gaussian kernel bandwidth and the total weight below which no drift is
/// applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub sigma: f64,
    pub weight_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 0.3,
            weight_floor: 1e-12,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight floor must be positive, got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

/// Result of evaluating the drift field at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub drift: Vec<f64>,
    /// `Σ w_i` before normalization.
    pub total_weight: f64,
    /// True when the total weight fell below the floor and the drift was
    /// set to zero.
    pub degenerate: bool,
}

/// Kernel-weighted mean of the field's displacements around `query`, with
/// weights `exp(−‖z_i − query‖² / 2σ²)`.
pub fn interpolate_drift(field: &DriftField, query: &[f64], cfg: &KernelConfig) -> Result<Interpolation> {
    cfg.validate()?;
    if field.is_empty() {
        return Err(Error::InvalidArgument("cannot interpolate an empty drift field".into()));
    }
    let d = field.dim();
    if query.len() != d {
        return Err(Error::Shape(format!("query has {} dimensions, field has {d}", query.len())));
    }
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let mut total = 0.0;
    let mut acc = vec![0.0; d];
    for (pos, delta) in field.positions.rows().zip(field.displacements.rows()) {
        let sq: f64 = pos.iter().zip(query).map(|(p, q)| (p - q) * (p - q)).sum();
        let w = (-sq * inv).exp();
        total += w;
        acc.iter_mut().zip(delta).for_each(|(a, v)| *a += w * v);
    }
    if total < cfg.weight_floor {
        return Ok(Interpolation {
            drift: vec![0.0; d],
            total_weight: total,
            degenerate: true,
        });
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(Interpolation {
        drift: acc,
        total_weight: total,
        degenerate: false,
    })
}

/// Drift applied to one prototype by [`compensate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compensation {
    pub class: ClassId,
    pub before: Vec<f64>,
    pub drift: Vec<f64>,
    pub after: Vec<f64>,
    pub degenerate: bool,
}

/// Moves every prototype learned before `task` by the drift interpolated at
/// its current position. Prototypes of `task` itself are left alone.
pub fn compensate(
    book: &mut PrototypeBook,
    field: &DriftField,
    cfg: &KernelConfig,
    task: usize,
) -> Result<Vec<Compensation>> {
    let mut applied = Vec::new();
    for class in book.classes() {
        let entry = book.get_mut(class).expect("listed class");
        if entry.learned_at >= task {
            continue;
        }
        let interp = interpolate_drift(field, &entry.vector, cfg)?;
        if interp.degenerate {
            log::warn!(
                "class {class}: kernel weight {:e} below floor; prototype left in place",
                interp.total_weight
            );
        }
        let before = entry.vector.clone();
        entry.vector.iter_mut().zip(&interp.drift).for_each(|(v, d)| *v += d);
        entry.compensation.iter_mut().zip(&interp.drift).for_each(|(c, d)| *c += d);
        applied.push(Compensation {
            class,
            before,
            drift: interp.drift,
            after: entry.vector.clone(),
            degenerate: interp.degenerate,
        });
    }
    Ok(applied)
}

/// Actual per-class drift `μ_c^t − μ_c^s` from retained data of the classes
/// in `old_book`, measured against each class's original prototype.
pub fn true_drift(
    old_book: &PrototypeBook,
    new_embeddings: &Tensor,
    labels: &[ClassId],
) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    let classes = old_book.classes();
    let means = compute_prototypes(new_embeddings, labels, &classes)?;
    Ok(means
        .into_iter()
        .map(|(c, m)| {
            let origin = &old_book.get(c).expect("listed class").origin;
            (c, m.iter().zip(origin).map(|(a, b)| a - b).collect())
        })
        .collect())
}
