use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::harness::config::Method;
use crate::harness::metrics::{avg_forgetting, avg_incremental_accuracy, AccuracyMatrix, ConfusionMatrix};
use crate::sdc::PrototypeBook;

/// Distance from one class's prototype to the mean test embedding of the
/// class, after every task (`None` before the class is learned).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTrace {
    pub class: ClassId,
    pub learned_at: usize,
    /// Using the prototype as compensated by this run.
    pub with_sdc: Vec<Option<f64>>,
    /// Using the prototype as first computed.
    pub without_sdc: Vec<Option<f64>>,
}

/// One prototype's displacement at a task boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMove {
    pub class: ClassId,
    pub before: Vec<f64>,
    pub drift: Vec<f64>,
    pub after: Vec<f64>,
    /// Mean test embedding of the class under the network after the task.
    pub true_mean: Vec<f64>,
    pub degenerate: bool,
}

/// Drift compensation applied after training `task`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTransition {
    pub task: usize,
    /// Mean length of the measured drift vectors.
    pub field_mean_norm: f64,
    pub moves: Vec<PrototypeMove>,
}

/// Test embeddings of the first task's classes, for 2-D plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoints {
    pub task: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
}

/// Training bookkeeping for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: usize,
    pub steps: usize,
    pub skipped_batches: usize,
    /// Mean training loss over the final epoch.
    pub final_loss: Option<f64>,
    /// Regularizer value before the first update of the task.
    pub regularizer_at_start: Option<f64>,
}

/// Everything measured during one (method, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub label: String,
    pub seed: u64,
    pub embedding_dim: usize,
    pub task_classes: Vec<Vec<ClassId>>,
    pub class_names: Vec<String>,
    pub accuracy: AccuracyMatrix,
    /// Accuracy over all seen test samples after each task.
    pub overall_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Option<ConfusionMatrix>>,
    pub prototype_traces: Vec<PrototypeTrace>,
    pub transitions: Vec<TaskTransition>,
    pub embedding_points: Vec<EmbeddingPoints>,
    pub task_stats: Vec<TaskStats>,
    pub final_prototypes: Option<PrototypeBook>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn n_tasks(&self) -> usize {
        self.task_classes.len()
    }

    /// `A_k`, 1-based.
    pub fn avg_incremental_accuracy(&self, k: usize) -> Result<f64> {
        avg_incremental_accuracy(&self.accuracy, k)
    }

    /// `F_k`, 1-based.
    pub fn avg_forgetting(&self, k: usize) -> Result<f64> {
        avg_forgetting(&self.accuracy, k)
    }

    /// Confusion matrix after task `k`, 1-based.
    pub fn confusion_matrix(&self, k: usize) -> Result<&ConfusionMatrix> {
        self.confusion
            .get(k.wrapping_sub(1))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::MissingData(format!("no confusion matrix after task {k}")))
    }

    /// `a_{k,j}`, 1-based.
    pub fn accuracy_at(&self, k: usize, j: usize) -> Option<f64> {
        self.accuracy.get(k.wrapping_sub(1))?.as_ref()?.get(j.wrapping_sub(1)).copied()
    }

    /// Mean over classes of the prototype-to-true-mean distance after task
    /// `k` (1-based), as `(with_sdc, without_sdc)`.
    pub fn mean_prototype_distance(&self, k: usize) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut a, mut b) = (0.0, 0.0);
        for t in &self.prototype_traces {
            if let (Some(Some(x)), Some(Some(y))) = (t.with_sdc.get(k - 1), t.without_sdc.get(k - 1)) {
                a += x;
                b += y;
                n += 1;
            }
        }
        (n > 0).then(|| (a / n as f64, b / n as f64))
    }
}

/// `k,j,accuracy` rows (1-based task indices), one per evaluated entry.
pub fn a_matrix_csv(acc: &AccuracyMatrix) -> String {
    let mut out = String::from("k,j,accuracy\n");
    for (k, row) in acc.iter().enumerate() {
        if let Some(row) = row {
            for (j, a) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", k + 1, j + 1, a).expect("writing to a String");
            }
        }
    }
    out
}

/// Parses the output of [`a_matrix_csv`].
pub fn read_a_matrix(path: &Path) -> Result<AccuracyMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some("k,j,accuracy") {
        return Err(err(1, "expected header `k,j,accuracy`".into()));
    }
    let mut acc: AccuracyMatrix = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i as u64 + 2;
        let fields: Vec<&str> = line.split(',').collect();
        let [k, j, a] = fields.as_slice() else {
            return Err(err(n, format!("expected 3 fields, found {}", fields.len())));
        };
        let k: usize = k.parse().map_err(|_| err(n, format!("bad task index `{k}`")))?;
        let j: usize = j.parse().map_err(|_| err(n, format!("bad task index `{j}`")))?;
        let a: f64 = a.parse().map_err(|_| err(n, format!("bad accuracy `{a}`")))?;
        if k == 0 || j == 0 || j > k {
            return Err(err(n, format!("entry ({k}, {j}) is outside the lower triangle")));
        }
        if acc.len() < k {
            acc.resize(k, None);
        }
        let row = acc[k - 1].get_or_insert_with(Vec::new);
        if row.len() != j - 1 {
            return Err(err(n, format!("entry ({k}, {j}) is out of order")));
        }
        row.push(a);
    }
    Ok(acc)
}

/// Contents of `prototypes.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypesFile {
    pub prototypes: Option<PrototypeBook>,
    pub transitions: Vec<TaskTransition>,
}

/// Writes `a_matrix.csv`, `record.json` and `prototypes.json` into `dir`.
pub fn write_run_files(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("a_matrix.csv", a_matrix_csv(&record.accuracy))?;
    write("record.json", serde_json::to_string_pretty(record)?)?;
    let protos = PrototypesFile {
        prototypes: record.final_prototypes.clone(),
        transitions: record.transitions.clone(),
    };
    write("prototypes.json", serde_json::to_string_pretty(&protos)?)
}

pub fn read_record(dir: &Path) -> Result<RunRecord> {
    let p = dir.join("record.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}
