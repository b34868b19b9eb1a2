//! Training objectives: the triplet metric loss with its miner, softmax
//! cross-entropy, the three embedding regularizers (output alignment and the
//! importance-weighted quadratic penalty) and their combination.

mod importance;
mod regularizers;
mod triplet;

pub use importance::{
    estimate_fisher, estimate_mas_importance, FisherConfig, FisherVariant, ImportanceKind, ImportanceMap,
};
pub use regularizers::{combined_loss, lwf_align_loss, quadratic_penalty, quadratic_penalty_value};
pub use triplet::{mine_triplets, triplet_loss, MiningStrategy, Triplet, TripletBatch};

use crate::error::Result;
use crate::nn::{Graph, NodeId};

/// Default triplet margin on unit-norm embeddings.
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Regularization weight used by embedding LwF unless configured.
pub const DEFAULT_GAMMA_LWF: f64 = 1.0;
/// Regularization weight used by embedding EWC unless configured.
pub const DEFAULT_GAMMA_EWC: f64 = 1e7;
/// Regularization weight used by embedding MAS unless configured.
pub const DEFAULT_GAMMA_MAS: f64 = 1e6;

/// Mean negative log-probability of the true class.
pub fn cross_entropy_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.softmax_cross_entropy(logits, labels)
}
