//! Network definitions: an embedding network with unit-norm output, a
//! growable multi-head softmax classifier, and frozen parameter snapshots.

mod arch;
mod embedding;
mod snapshot;
mod softmax;

pub use arch::{Architecture, Layer};
pub(crate) use arch::seeded_rng;
pub use embedding::EmbeddingModel;
pub use snapshot::{ModelKind, ModelSnapshot};
pub use softmax::SoftmaxModel;

use crate::error::Result;
use crate::nn::{Graph, ParamSet, Tensor};

pub(crate) const INFERENCE_CHUNK: usize = 512;

/// Runs `arch` on `batch` in chunks outside of training.
pub(crate) fn run_network(arch: &Architecture, params: &ParamSet, batch: &Tensor, normalize: bool) -> Result<Tensor> {
    let (n, _) = batch.dims2()?;
    let width = arch.output_dim()?;
    let mut out = Vec::with_capacity(n * width);
    let mut start = 0;
    loop {
        let end = (start + INFERENCE_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut g = Graph::new();
        let x = g.input(batch.select_rows(&rows)?);
        let mut y = arch.forward(&mut g, params, 0, x)?;
        if normalize && end > start {
            y = g.l2_normalize(y, 1).map_err(|e| match e {
                crate::Error::Normalization { index, norm } => crate::Error::Normalization {
                    index: index + start,
                    norm,
                },
                other => other,
            })?;
        }
        out.extend_from_slice(g.value(y).data());
        if end >= n {
            break;
        }
        start = end;
    }
    Tensor::new(vec![n, width], out)
}
