use std::path::PathBuf;

use rayon::prelude::*;

use crate::data::TrainTest;
use crate::error::Result;
use crate::harness::{run_sequence_observed, write_run_files, MethodConfig, RunRecord};
use crate::models::ModelSnapshot;
use crate::report::config::ExperimentConfig;

/// Result of one (method, seed) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    /// `<output_dir>/<label>/<seed>`.
    pub dir: PathBuf,
    pub result: Result<RunRecord>,
}

/// Runs every (method, seed) pair of `cfg` on `data`, in parallel, and writes
/// each run's files. A failing run does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig, data: &TrainTest, seeds: &[u64]) -> Vec<RunOutcome> {
    let jobs: Vec<(&MethodConfig, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(method, seed)| {
            let label = method.label();
            let dir = cfg.experiment.output_dir.join(&label).join(seed.to_string());
            let result = run_one(cfg, method, seed, data, &dir);
            RunOutcome {
                label,
                seed,
                dir,
                result,
            }
        })
        .collect()
}

fn run_one(cfg: &ExperimentConfig, method: &MethodConfig, seed: u64, data: &TrainTest, dir: &PathBuf) -> Result<RunRecord> {
    let seq = cfg.dataset.split(data, seed)?;
    let run_cfg = MethodConfig {
        seed,
        ..method.clone()
    };
    let mut last: Option<ModelSnapshot> = None;
    let record = run_sequence_observed(&run_cfg, &cfg.model, &seq, |ev| last = Some(ev.snapshot.clone()))?;
    write_run_files(dir, &record)?;
    if let Some(snapshot) = last {
        snapshot.save(dir, "model")?;
    }
    Ok(record)
}
