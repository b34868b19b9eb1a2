use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{avg_incremental_accuracy, read_a_matrix};

/// `A_k` of one run, read back from its `a_matrix.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunCurve {
    pub label: String,
    pub dir: PathBuf,
    /// `A_1..A_n`; `None` where the run did not evaluate.
    pub avg_accuracy: Vec<Option<f64>>,
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, count: n })
    }
}

/// Methods × tasks table of `A_k`, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareTable {
    pub n_tasks: usize,
    pub rows: Vec<CompareRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub runs: usize,
    pub cells: Vec<Option<Summary>>,
}

/// Every directory under `root` (itself included) holding an `a_matrix.csv`,
/// sorted by path.
pub fn find_runs(root: &Path, marker: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(marker).is_file() {
            found.push(dir.clone());
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    found.dedup();
    Ok(found)
}

/// Reads one run directory laid out as `<label>/<seed>/a_matrix.csv`.
pub fn read_run_curve(dir: &Path) -> Result<RunCurve> {
    let acc = read_a_matrix(&dir.join("a_matrix.csv"))?;
    let label = dir
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::MissingData(format!("{}: cannot infer the method from the path", dir.display())))?;
    let avg_accuracy = (1..=acc.len()).map(|k| avg_incremental_accuracy(&acc, k).ok()).collect();
    Ok(RunCurve {
        label,
        dir: dir.to_path_buf(),
        avg_accuracy,
    })
}

/// Collects every run under `dirs` and aggregates `A_k` per method label.
pub fn compare_dirs(dirs: &[PathBuf]) -> Result<CompareTable> {
    let mut curves = Vec::new();
    for d in dirs {
        for run in find_runs(d, "a_matrix.csv")? {
            curves.push(read_run_curve(&run)?);
        }
    }
    build_table(&curves)
}

pub fn build_table(curves: &[RunCurve]) -> Result<CompareTable> {
    let first = curves
        .first()
        .ok_or_else(|| Error::MissingData("no a_matrix.csv found".into()))?;
    let n_tasks = first.avg_accuracy.len();
    if let Some(bad) = curves.iter().find(|c| c.avg_accuracy.len() != n_tasks) {
        return Err(Error::InvalidArgument(format!(
            "{} has {} tasks but {} has {n_tasks}",
            bad.dir.display(),
            bad.avg_accuracy.len(),
            first.dir.display()
        )));
    }
    let mut grouped: BTreeMap<&str, Vec<&RunCurve>> = BTreeMap::new();
    for c in curves {
        grouped.entry(&c.label).or_default().push(c);
    }
    let rows = grouped
        .into_iter()
        .map(|(label, runs)| CompareRow {
            label: label.to_string(),
            runs: runs.len(),
            cells: (0..n_tasks)
                .map(|k| {
                    let vals: Vec<f64> = runs.iter().filter_map(|r| r.avg_accuracy[k]).collect();
                    Summary::of(&vals)
                })
                .collect(),
        })
        .collect();
    Ok(CompareTable { n_tasks, rows })
}

impl CompareTable {
    /// Markdown table of `A_k` in percent, `mean ± std` over seeds.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method | runs |");
        for k in 1..=self.n_tasks {
            write!(out, " A_{k} |").expect("writing to a String");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(self.n_tasks));
        out.push('\n');
        for row in &self.rows {
            write!(out, "| {} | {} |", row.label, row.runs).expect("writing to a String");
            for cell in &row.cells {
                out.push(' ');
                out.push_str(&format_cell(cell.as_ref()));
                out.push_str(" |");
            }
            out.push('\n');
        }
        out
    }
}

/// `mean ± std` in percent with two decimals, `-` when absent.
pub fn format_cell(cell: Option<&Summary>) -> String {
    match cell {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".to_string(),
    }
}
