use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{gen_gaussian_clusters, read_csv_dataset, read_mnist_dir, TrainTest};
use crate::error::{Error, Result};
use crate::harness::{split_tasks, MethodConfig, ModelConfig, TaskSequence};

/// Environment variable that replaces `experiment.seeds` with a
/// comma-separated list.
pub const SEED_OVERRIDE_VAR: &str = "DRIFTLAB_SEED_OVERRIDE";

/// A whole experiment: one dataset, one network shape, several methods,
/// several seeds.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(rename = "method")]
    pub methods: Vec<MethodConfig>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Relative paths are taken from the config file's directory.
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
    Csv,
}

/// Where samples come from and how classes are cut into tasks.
///
/// The class order of the split is drawn from the run seed unless
/// `split_seed` fixes it.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub n_tasks: usize,
    #[serde(default)]
    pub first_task_fraction: Option<f64>,
    #[serde(default)]
    pub held_out_classes: Vec<usize>,
    #[serde(default)]
    pub split_seed: Option<u64>,

    /// `synthetic`: number of Gaussian clusters.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub data_seed: Option<u64>,

    /// `idx`: directory with the four MNIST-named files.
    #[serde(default)]
    pub dir: Option<PathBuf>,

    /// `csv`: training and test files.
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads and validates a TOML file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
            Error::config(key, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.experiment.output_dir);
        for p in [&mut self.dataset.dir, &mut self.dataset.train, &mut self.dataset.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "list at least one seed"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("method", "add at least one [[method]] table"));
        }
        self.model.validate()?;
        self.dataset.validate()?;
        let mut labels = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            m.validate().map_err(|e| match e {
                Error::Config { key, message } => Error::config(format!("method[{i}].{key}"), message),
                other => other,
            })?;
            if m.seed != 0 {
                return Err(Error::config(format!("method[{i}].seed"), "seeds are set in [experiment]"));
            }
            if !labels.insert(m.label()) {
                return Err(Error::config(format!("method[{i}]"), format!("`{}` is listed twice", m.label())));
            }
        }
        Ok(())
    }

    /// `experiment.seeds`, or the list in [`SEED_OVERRIDE_VAR`] when set.
    pub fn effective_seeds(&self) -> Result<Vec<u64>> {
        match std::env::var(SEED_OVERRIDE_VAR) {
            Ok(list) => parse_seed_list(&list),
            Err(_) => Ok(self.experiment.seeds.clone()),
        }
    }
}

fn parse_seed_list(list: &str) -> Result<Vec<u64>> {
    let seeds = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(SEED_OVERRIDE_VAR, format!("`{s}` is not a seed")))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::config(SEED_OVERRIDE_VAR, "list at least one seed"));
    }
    Ok(seeds)
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Idx => "idx",
            DataSource::Csv => "csv",
        }
    }
}

impl DatasetConfig {
    fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::config(format!("dataset.{key}"), format!("required for source `{}`", self.source.name())))
    }

    fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::config("dataset.n_tasks", "must be at least 1"));
        }
        match self.source {
            DataSource::Synthetic => {
                for (key, v) in [
                    ("classes", self.classes),
                    ("train_per_class", self.train_per_class),
                    ("test_per_class", self.test_per_class),
                    ("dim", self.dim),
                ] {
                    if *self.require(&v, key)? == 0 {
                        return Err(Error::config(format!("dataset.{key}"), "must be positive"));
                    }
                }
                let spread = *self.require(&self.spread, "spread")?;
                if !(spread >= 0.0 && spread.is_finite()) {
                    return Err(Error::config("dataset.spread", "must be finite and non-negative"));
                }
            }
            DataSource::Idx => {
                self.require(&self.dir, "dir")?;
            }
            DataSource::Csv => {
                self.require(&self.train, "train")?;
                self.require(&self.test, "test")?;
            }
        }
        Ok(())
    }

    /// Reads or generates the train/test pair.
    pub fn load(&self) -> Result<TrainTest> {
        self.validate()?;
        match self.source {
            DataSource::Synthetic => {
                let (train_n, test_n) = (self.train_per_class.unwrap_or(0), self.test_per_class.unwrap_or(0));
                let all = gen_gaussian_clusters(
                    self.classes.unwrap_or(0),
                    train_n + test_n,
                    self.dim.unwrap_or(0),
                    self.spread.unwrap_or(0.0),
                    self.data_seed.unwrap_or(0),
                )?;
                let per = train_n + test_n;
                let (train, test): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % per < train_n);
                TrainTest::new(all.subset(&train), all.subset(&test))
            }
            DataSource::Idx => read_mnist_dir(self.dir.as_deref().unwrap_or(Path::new("."))),
            DataSource::Csv => {
                let train = read_csv_dataset(self.train.as_deref().unwrap_or(Path::new("")))?;
                let test = read_csv_dataset(self.test.as_deref().unwrap_or(Path::new("")))?;
                TrainTest::new(train, test)
            }
        }
    }

    /// Task sequence for one run seed.
    pub fn split(&self, data: &TrainTest, run_seed: u64) -> Result<TaskSequence> {
        split_tasks(
            data,
            self.n_tasks,
            self.first_task_fraction,
            &self.held_out_classes,
            self.split_seed.unwrap_or(run_seed),
        )
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::config("dataset", m),
            other => other,
        })
    }
}

/// Dotted key (`section.key`) of the line holding byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(h) = trimmed.strip_prefix('[') {
            section = h.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}
