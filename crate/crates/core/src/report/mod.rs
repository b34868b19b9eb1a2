//! Experiment configuration, result tables and SVG charts behind the
//! command-line tool.

mod compare;
mod config;
mod experiment;
mod plots;

use std::fs;
use std::path::{Path, PathBuf};

pub use compare::{
    build_table, compare_dirs, find_runs, format_cell, read_run_curve, CompareRow, CompareTable, RunCurve, Summary,
};
pub use config::{DataSource, DatasetConfig, ExperimentConfig, ExperimentSection, SEED_OVERRIDE_VAR};
pub use experiment::{run_experiment, RunOutcome};
pub use plots::{confusion_svg, confusion_svgs, curves_svg, embedding_svgs};

use crate::error::{Error, Result};
use crate::harness::read_record;

/// Chart families produced by [`plot_dir`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Embedding,
    Curves,
    Confusion,
}

/// Writes charts for the results under `dir` and returns the files written.
///
/// `Embedding` and `Confusion` draw every run found under `dir` into the
/// run's own `plots/` directory; `Curves` draws one `plots/curves.svg` for
/// `dir` as a whole.
pub fn plot_dir(dir: &Path, kind: PlotKind) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut save = |target: PathBuf, name: &str, body: &str| -> Result<()> {
        fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        let p = target.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    if kind == PlotKind::Curves {
        let table = compare_dirs(&[dir.to_path_buf()])?;
        save(dir.join("plots"), "curves.svg", &curves_svg(&table))?;
        return Ok(written);
    }
    let runs = find_runs(dir, "record.json")?;
    if runs.is_empty() {
        return Err(Error::MissingData(format!("no record.json under {}", dir.display())));
    }
    for run in runs {
        let record = read_record(&run)?;
        let files = match kind {
            PlotKind::Embedding => embedding_svgs(&record)?,
            _ => confusion_svgs(&record)?,
        };
        for (name, body) in files {
            save(run.join("plots"), &name, &body)?;
        }
    }
    Ok(written)
}
