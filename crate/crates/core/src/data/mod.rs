//! Dataset ingestion: a seeded Gaussian cluster generator, an IDX (MNIST
//! format) reader and a labelled CSV reader/writer.
//!
//! Every reader remaps labels onto a contiguous `0..K` range and keeps the
//! original names in [`LabeledDataset::class_names`].

mod csv_format;
mod idx;
mod synthetic;

pub use csv_format::{read_csv_dataset, write_csv_dataset};
pub use idx::{read_idx, read_idx_images, read_idx_labels, read_mnist_dir};
pub use synthetic::gen_gaussian_clusters;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Contiguous class index, `0..K`.
pub type ClassId = usize;

/// Row-major samples with one label each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<ClassId>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    /// Checks that `features` holds `labels.len()` rows of width `dim` and
    /// that every label has a name.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<ClassId>, class_names: Vec<String>) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} labels of width {dim} need {} feature values, got {}",
                labels.len(),
                labels.len() * dim,
                features.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} has no class name ({} classes)",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_names,
        })
    }

    /// Builds a dataset from raw labels, mapping them onto `0..K` in sorted
    /// order.
    pub fn from_raw_labels(features: Vec<f64>, dim: usize, raw: &[u64]) -> Result<Self> {
        let mut distinct: Vec<u64> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = raw
            .iter()
            .map(|r| distinct.binary_search(r).expect("present"))
            .collect();
        let names = distinct.iter().map(u64::to_string).collect();
        Self::new(features, dim, labels, names)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// All features as a `[n, dim]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.features.clone()).expect("validated on construction")
    }

    /// Rows `indices` as a `[indices.len(), dim]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new(vec![indices.len(), self.dim], data).expect("row widths match")
    }

    /// Subset keeping the original class ids and names, in original order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        Self {
            features: self.batch(indices).into_data(),
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Samples whose label is in `classes`, in original order.
    pub fn filter_classes(&self, classes: &[ClassId]) -> LabeledDataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&keep)
    }

    /// Concatenation of two datasets over the same class list.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.dim != other.dim || self.class_names != other.class_names {
            return Err(Error::Shape("datasets differ in width or classes".into()));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }
}

/// Training and evaluation sets sharing one label space.
#[derive(Clone, Debug)]
pub struct TrainTest {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl TrainTest {
    pub fn new(train: LabeledDataset, test: LabeledDataset) -> Result<Self> {
        if train.dim() != test.dim() {
            return Err(Error::Shape(format!(
                "train width {} differs from test width {}",
                train.dim(),
                test.dim()
            )));
        }
        if train.class_names() != test.class_names() {
            return Err(Error::InvalidArgument("train and test label sets differ".into()));
        }
        Ok(Self { train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_labels_are_remapped_in_sorted_order() {
        let ds = LabeledDataset::from_raw_labels(vec![0.0; 3], 1, &[7, 3, 7]).unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.class_names(), &["3".to_string(), "7".to_string()]);
    }

    #[test]
    fn filter_keeps_order() {
        let ds = LabeledDataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![0, 1, 0, 1], vec!["a".into(), "b".into()]).unwrap();
        let f = ds.filter_classes(&[1]);
        assert_eq!(f.features(), &[1.0, 3.0]);
    }

    #[test]
    fn count_mismatch_rejected() {
        assert!(LabeledDataset::new(vec![0.0; 5], 2, vec![0, 0], vec!["a".into()]).is_err());
    }
}
