use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One class's prototype: where it was computed, where it is now and the
/// drift accumulated in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub class: ClassId,
    pub learned_at: usize,
    /// Current (possibly compensated) position used for classification.
    pub vector: Vec<f64>,
    /// Mean embedding at the time the class was learned.
    pub origin: Vec<f64>,
    /// Sum of all drift estimates applied so far.
    pub compensation: Vec<f64>,
}

/// Prototype per seen class, keyed by class id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BookFile", into = "BookFile")]
pub struct PrototypeBook {
    dim: usize,
    entries: BTreeMap<ClassId, PrototypeEntry>,
}

#[derive(Serialize, Deserialize)]
struct BookFile {
    dim: usize,
    prototypes: Vec<PrototypeEntry>,
}

impl From<PrototypeBook> for BookFile {
    fn from(b: PrototypeBook) -> Self {
        Self {
            dim: b.dim,
            prototypes: b.entries.into_values().collect(),
        }
    }
}

impl TryFrom<BookFile> for PrototypeBook {
    type Error = Error;

    fn try_from(f: BookFile) -> Result<Self> {
        let mut book = PrototypeBook::new(f.dim);
        for e in f.prototypes {
            if e.origin.len() != f.dim || e.compensation.len() != f.dim {
                return Err(Error::Shape(format!("prototype {} has the wrong width", e.class)));
            }
            book.check_new(e.class, &e.vector)?;
            book.entries.insert(e.class, e);
        }
        Ok(book)
    }
}

impl PrototypeBook {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_new(&self, class: ClassId, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "prototype for class {class} has {} dimensions, book holds {}",
                vector.len(),
                self.dim
            )));
        }
        if self.entries.contains_key(&class) {
            return Err(Error::InvalidArgument(format!("class {class} already has a prototype")));
        }
        Ok(())
    }

    /// Adds a freshly computed prototype for a class first seen at `task`.
    pub fn insert(&mut self, class: ClassId, vector: Vec<f64>, learned_at: usize) -> Result<()> {
        self.check_new(class, &vector)?;
        self.entries.insert(
            class,
            PrototypeEntry {
                class,
                learned_at,
                origin: vector.clone(),
                compensation: vec![0.0; vector.len()],
                vector,
            },
        );
        Ok(())
    }

    /// Replaces a class's prototype with a recomputed mean, resetting its
    /// accumulated compensation.
    pub fn recompute(&mut self, class: ClassId, vector: Vec<f64>) -> Result<()> {
        let learned_at = self
            .entries
            .get(&class)
            .map(|e| e.learned_at)
            .ok_or_else(|| Error::MissingData(format!("class {class} has no prototype")))?;
        self.entries.remove(&class);
        self.insert(class, vector, learned_at)
    }

    pub fn get(&self, class: ClassId) -> Option<&PrototypeEntry> {
        self.entries.get(&class)
    }

    pub(crate) fn get_mut(&mut self, class: ClassId) -> Option<&mut PrototypeEntry> {
        self.entries.get_mut(&class)
    }

    /// Entries in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = &PrototypeEntry> {
        self.entries.values()
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.entries.keys().copied().collect()
    }

    /// Copy with every prototype vector projected onto the unit sphere.
    pub fn renormalized(&self) -> PrototypeBook {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            let n = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                e.vector.iter_mut().for_each(|v| *v /= n);
            }
        }
        out
    }
}

/// Per-class mean embedding for each class in `classes`.
pub fn compute_prototypes(
    embeddings: &Tensor,
    labels: &[ClassId],
    classes: &[ClassId],
) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    let (n, d) = embeddings.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = classes.iter().map(|&c| (c, (vec![0.0; d], 0))).collect();
    for (row, label) in embeddings.rows().zip(labels) {
        if let Some((sum, count)) = sums.get_mut(label) {
            sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            *count += 1;
        }
    }
    sums.into_iter()
        .map(|(c, (sum, count))| {
            if count == 0 {
                return Err(Error::MissingData(format!("class {c} has no samples")));
            }
            Ok((c, sum.into_iter().map(|s| s / count as f64).collect()))
        })
        .collect()
}

/// Nearest prototype by Euclidean distance; ties go to the lowest class id.
pub fn ncm_classify(embeddings: &Tensor, book: &PrototypeBook) -> Result<Vec<ClassId>> {
    if book.is_empty() {
        return Err(Error::State("nearest-class-mean needs at least one prototype".into()));
    }
    let (_, d) = embeddings.dims2()?;
    if d != book.dim {
        return Err(Error::Shape(format!(
            "embeddings have {d} dimensions, prototypes have {}",
            book.dim
        )));
    }
    Ok(embeddings
        .rows()
        .map(|z| {
            let mut best = (f64::INFINITY, 0);
            for e in book.iter() {
                let dist: f64 = z.iter().zip(&e.vector).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, e.class);
                }
            }
            best.1
        })
        .collect())
}
