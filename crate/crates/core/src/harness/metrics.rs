use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};

/// Row `k` (0-based) holds `a_{k,j}` for `j = 0..=k`, or `None` when the
/// run did not evaluate after task `k`.
pub type AccuracyMatrix = Vec<Option<Vec<f64>>>;

fn row(acc: &AccuracyMatrix, k: usize) -> Result<&[f64]> {
    if k == 0 || k > acc.len() {
        return Err(Error::InvalidArgument(format!("task {k} is outside 1..={}", acc.len())));
    }
    match &acc[k - 1] {
        Some(r) if r.len() == k => Ok(r),
        _ => Err(Error::MissingData(format!("accuracy row {k} is incomplete"))),
    }
}

/// `A_k = (1/k) Σ_{j≤k} a_{k,j}` with 1-based `k`.
pub fn avg_incremental_accuracy(acc: &AccuracyMatrix, k: usize) -> Result<f64> {
    let r = row(acc, k)?;
    Ok(r.iter().sum::<f64>() / k as f64)
}

/// `F_k = (1/(k−1)) Σ_{j<k} max_{l<k}(a_{l,j} − a_{k,j})` with 1-based `k`.
pub fn avg_forgetting(acc: &AccuracyMatrix, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("forgetting needs k ≥ 2, got {k}")));
    }
    let last = row(acc, k)?;
    let mut total = 0.0;
    for j in 0..k - 1 {
        let mut worst = f64::NEG_INFINITY;
        for l in j + 1..k {
            worst = worst.max(row(acc, l)?[j] - last[j]);
        }
        total += worst;
    }
    Ok(total / (k - 1) as f64)
}

/// Test counts by true class (rows) and predicted class (columns).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: &[ClassId], truth: &[ClassId], predicted: &[ClassId]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let pos = |c: ClassId| {
            classes
                .iter()
                .position(|&x| x == c)
                .ok_or_else(|| Error::InvalidArgument(format!("class {c} is not among the evaluated classes")))
        };
        let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[pos(t)?][pos(p)?] += 1;
        }
        Ok(Self {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total.
    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }
}
