use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};

/// Row indices of an anchor, a positive sharing its label and a negative
/// with a different label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Validated triplets over one mini-batch plus the margin they are scored with.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    triplets: Vec<Triplet>,
    margin: f64,
}

impl TripletBatch {
    /// Checks bounds and label agreement for every triplet.
    pub fn new(triplets: Vec<Triplet>, margin: f64, labels: &[usize]) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin must be finite and non-negative, got {margin}")));
        }
        for t in &triplets {
            let n = labels.len();
            if t.anchor >= n || t.positive >= n || t.negative >= n {
                return Err(Error::InvalidArgument(format!("triplet {t:?} out of bounds for {n} samples")));
            }
            if t.anchor == t.positive || labels[t.anchor] != labels[t.positive] || labels[t.anchor] == labels[t.negative] {
                return Err(Error::InvalidArgument(format!("triplet {t:?} violates the label constraints")));
            }
        }
        Ok(Self { triplets, margin })
    }

    pub fn empty(margin: f64) -> Self {
        Self {
            triplets: Vec::new(),
            margin,
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }
}

/// How a negative is picked for each anchor-positive pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningStrategy {
    /// One uniformly random negative per pair.
    Random,
    /// The closest negative still farther than the positive; if none is, the
    /// closest negative overall.
    #[default]
    Semihard,
}

/// Every ordered anchor-positive pair of the batch, each with one negative.
/// Returns an empty batch when no valid triplet exists.
pub fn mine_triplets(
    labels: &[usize],
    embeddings: &Tensor,
    strategy: MiningStrategy,
    margin: f64,
    rng: &mut impl Rng,
) -> Result<TripletBatch> {
    let (n, _) = embeddings.dims2()?;
    if n != labels.len() {
        return Err(Error::Shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    let dist = |a: usize, b: usize| -> f64 {
        embeddings
            .row(a)
            .iter()
            .zip(embeddings.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut triplets = Vec::new();
    for a in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if negatives.is_empty() {
            continue;
        }
        let d_neg: Vec<f64> = if strategy == MiningStrategy::Semihard {
            negatives.iter().map(|&j| dist(a, j)).collect()
        } else {
            Vec::new()
        };
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let negative = match strategy {
                MiningStrategy::Random => negatives[rng.gen_range(0..negatives.len())],
                MiningStrategy::Semihard => {
                    let d_pos = dist(a, p);
                    let pick = |admit: &dyn Fn(f64) -> bool| {
                        let mut best: Option<usize> = None;
                        for (k, &d) in d_neg.iter().enumerate() {
                            if admit(d) && best.map_or(true, |b| d < d_neg[b]) {
                                best = Some(k);
                            }
                        }
                        best
                    };
                    let k = pick(&|d| d > d_pos).or_else(|| pick(&|_| true)).expect("negatives nonempty");
                    negatives[k]
                }
            };
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative,
            });
        }
    }
    Ok(TripletBatch { triplets, margin })
}

/// Mean of `max(0, ‖z_a − z_p‖ − ‖z_a − z_n‖ + m)` over the batch. An empty
/// batch contributes a constant zero.
pub fn triplet_loss(g: &mut Graph, embeddings: NodeId, batch: &TripletBatch) -> Result<NodeId> {
    if batch.is_empty() {
        log::warn!("no valid triplets in batch; metric loss is zero");
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let pick = |f: fn(&Triplet) -> usize| batch.triplets.iter().map(f).collect::<Vec<_>>();
    let a = g.gather_rows(embeddings, &pick(|t| t.anchor))?;
    let p = g.gather_rows(embeddings, &pick(|t| t.positive))?;
    let n = g.gather_rows(embeddings, &pick(|t| t.negative))?;
    let ap = g.sub(a, p)?;
    let an = g.sub(a, n)?;
    let d_pos = g.row_norm(ap)?;
    let d_neg = g.row_norm(an)?;
    let gap = g.sub(d_pos, d_neg)?;
    let shifted = g.add_scalar(gap, batch.margin);
    let hinge = g.relu(shifted);
    Ok(g.mean(hinge))
}
