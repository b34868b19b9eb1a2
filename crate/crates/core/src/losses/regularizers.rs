use crate::error::{Error, Result};
use crate::losses::ImportanceMap;
use crate::models::{EmbeddingModel, ModelSnapshot};
use crate::nn::{Graph, NodeId, ParamSet, Tensor};

/// `‖z^t − z^{t−1}‖_F` over a batch. `embeddings` holds the current model's
/// output for `batch`; the previous output comes from `snapshot` and is a
/// constant on the graph.
pub fn lwf_align_loss(
    g: &mut Graph,
    model: &EmbeddingModel,
    snapshot: &ModelSnapshot,
    embeddings: NodeId,
    batch: &Tensor,
) -> Result<NodeId> {
    if !model.compatible_with(snapshot) {
        return Err(Error::Architecture("snapshot does not match the model being trained".into()));
    }
    let previous = snapshot.embed(batch)?;
    if previous.shape() != g.value(embeddings).shape() {
        return Err(Error::Shape(format!(
            "current embeddings {:?} vs previous {:?}",
            g.value(embeddings).shape(),
            previous.shape()
        )));
    }
    let prev = g.input(previous);
    let diff = g.sub(embeddings, prev)?;
    Ok(g.frobenius_norm(diff))
}

/// `Σ_p ½ w_p (θ_p − θ'_p)²` with θ' taken from `snapshot`. Shared by the
/// Fisher- and MAS-weighted variants.
pub fn quadratic_penalty(
    g: &mut Graph,
    params: &ParamSet,
    snapshot: &ModelSnapshot,
    importance: &ImportanceMap,
) -> Result<NodeId> {
    check_layout(params, snapshot.params(), importance)?;
    let mut total: Option<NodeId> = None;
    for i in 0..params.len() {
        let theta = g.param(params, i);
        let term = g.weighted_sq_dist(theta, snapshot.params().get(i).data(), importance.weights().get(i).data())?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap_or_else(|| g.input(Tensor::scalar(0.0))))
}

/// Value of [`quadratic_penalty`] without recording a graph.
pub fn quadratic_penalty_value(params: &ParamSet, anchor: &ParamSet, importance: &ImportanceMap) -> Result<f64> {
    check_layout(params, anchor, importance)?;
    let mut total = 0.0;
    for i in 0..params.len() {
        let (t, a, w) = (params.get(i).data(), anchor.get(i).data(), importance.weights().get(i).data());
        total += (0..t.len()).map(|k| 0.5 * w[k] * (t[k] - a[k]) * (t[k] - a[k])).sum::<f64>();
    }
    Ok(total)
}

fn check_layout(params: &ParamSet, anchor: &ParamSet, importance: &ImportanceMap) -> Result<()> {
    if !params.same_layout(anchor) || !params.same_layout(importance.weights()) {
        return Err(Error::Shape(
            "parameters, snapshot and importance map must share one layout".into(),
        ));
    }
    Ok(())
}

/// `L = L_ML + γ·L_C`.
pub fn combined_loss(g: &mut Graph, metric: NodeId, regularizer: NodeId, gamma: f64) -> Result<NodeId> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let weighted = g.scale(regularizer, gamma);
    g.add(metric, weighted)
}
