use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::seeded_rng;

/// `n_classes` isotropic Gaussian blobs. Each centre is a uniformly random
/// point on the unit sphere in `dim` dimensions; samples add noise with
/// standard deviation `spread` per coordinate. Samples are grouped by class.
pub fn gen_gaussian_clusters(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "class count, samples per class and dimension must all be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be finite and non-negative, got {spread}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let centres: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    let mut features = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(centre.iter().map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    LabeledDataset::new(features, dim, labels, (0..n_classes).map(|c| c.to_string()).collect())
}

/// Unit-sphere centres used for `seed`, matching [`gen_gaussian_clusters`].
#[cfg(test)]
pub(crate) fn centres(n_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let ds = gen_gaussian_clusters(n_classes, 1, dim, 0.0, seed).unwrap();
    (0..n_classes).map(|c| ds.sample(c).to_vec()).collect()
}
