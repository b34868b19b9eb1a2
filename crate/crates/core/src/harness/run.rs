use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::harness::config::{ImportanceAccumulation, Method, MethodConfig, ModelConfig};
use crate::harness::metrics::ConfusionMatrix;
use crate::harness::record::{EmbeddingPoints, PrototypeMove, PrototypeTrace, RunRecord, TaskStats, TaskTransition};
use crate::harness::tasks::{Task, TaskSequence};
use crate::harness::train::{train_task, Anchor, Learner, PRETRAIN_TASK};
use crate::losses::{estimate_fisher, estimate_mas_importance, FisherConfig, ImportanceMap};
use crate::models::ModelSnapshot;
use crate::nn::Tensor;
use crate::sdc::{compensate, compute_prototypes, ncm_classify, DriftField, PrototypeBook};

/// Most test points per class kept for 2-D embedding plots.
const PLOT_POINTS_PER_CLASS: usize = 100;

/// State visible to an observer after each task has been trained and
/// evaluated.
pub struct TaskEvent<'a> {
    pub task: usize,
    pub learner: &'a Learner,
    /// Network after this task (the anchor for the next one).
    pub snapshot: &'a ModelSnapshot,
    pub prototypes: Option<&'a PrototypeBook>,
    /// Importance map the next task will be regularized with.
    pub importance: Option<&'a ImportanceMap>,
}

/// Runs `cfg` over the whole sequence.
pub fn run_sequence(cfg: &MethodConfig, model: &ModelConfig, seq: &TaskSequence) -> Result<RunRecord> {
    run_sequence_observed(cfg, model, seq, |_| {})
}

/// [`run_sequence`] that calls `observe` after every task.
///
/// Per task: train; compute prototypes of the new classes from their
/// training data; with drift compensation, move older prototypes by the
/// drift measured on the new training data; estimate the importance map for
/// the next task; evaluate every seen task. `Joint` trains once on all data
/// and only fills the last row.
pub fn run_sequence_observed(
    cfg: &MethodConfig,
    model: &ModelConfig,
    seq: &TaskSequence,
    mut observe: impl FnMut(&TaskEvent<'_>),
) -> Result<RunRecord> {
    cfg.validate()?;
    model.validate()?;
    let first = seq
        .tasks()
        .first()
        .ok_or_else(|| Error::MissingData("task sequence is empty".into()))?;
    let started = Instant::now();
    let n = seq.len();
    let mut learner = Learner::new(cfg.method, first.train.dim(), model, cfg.seed)?;
    let mut run = RunState::new(cfg, model, seq);

    if cfg.method == Method::Joint {
        let all = seq.joint_train()?;
        let stats = train_task(&mut learner, 0, &all, seq.class_order(), cfg, None)?;
        run.record.task_stats.push(stats);
        let feats = learner.features(&all.to_tensor())?;
        let protos = compute_prototypes(&feats, all.labels(), seq.class_order())?;
        for task in seq.tasks() {
            for &c in &task.classes {
                run.book.insert(c, protos[&c].clone(), task.index)?;
            }
        }
        run.evaluate(&learner, n - 1)?;
        let snapshot = learner.snapshot(n - 1);
        observe(&TaskEvent {
            task: n - 1,
            learner: &learner,
            snapshot: &snapshot,
            prototypes: Some(&run.book),
            importance: None,
        });
        return Ok(run.finish(started));
    }

    if cfg.method == Method::EPreSubstitute {
        let held = seq
            .held_out()
            .ok_or_else(|| Error::config("dataset.held_out_classes", "E-Pre-substitute needs held-out classes"))?;
        let mut classes: Vec<ClassId> = held.labels().to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::config(
                "dataset.held_out_classes",
                "E-Pre-substitute needs at least two held-out classes to form triplets",
            ));
        }
        let pre = MethodConfig {
            epochs: cfg.pretrain_epochs.unwrap_or(cfg.epochs),
            ..cfg.clone()
        };
        train_task(&mut learner, PRETRAIN_TASK, held, &classes, &pre, None)?;
    }

    let mut before = learner.snapshot(0);
    let mut importance: Option<ImportanceMap> = None;
    let mut estimates = 0usize;
    for task in seq.tasks() {
        let t = task.index;
        let trains = match cfg.method {
            Method::EFix => t == 0,
            Method::EPreSubstitute => false,
            _ => true,
        };
        let stats = if trains {
            let anchor = (t > 0).then(|| Anchor {
                snapshot: &before,
                importance: importance.as_ref(),
            });
            train_task(&mut learner, t, &task.train, &task.classes, cfg, anchor)?
        } else {
            TaskStats {
                task: t,
                steps: 0,
                skipped_batches: 0,
                final_loss: None,
                regularizer_at_start: None,
            }
        };
        run.record.task_stats.push(stats);

        if cfg.method != Method::Ft {
            let x = task.train.to_tensor();
            let feats = learner.features(&x)?;
            let protos = compute_prototypes(&feats, task.train.labels(), &task.classes)?;
            for (c, p) in protos {
                run.book.insert(c, p, t)?;
            }
            if cfg.sdc && t > 0 {
                let field = DriftField::from_endpoints(before.embed(&x)?, &feats, task.train.labels().to_vec())?;
                let moves = compensate(&mut run.book, &field, &cfg.kernel(), t)?;
                run.pending_transition = Some((field.mean_norm(), moves));
            }
        }

        let after = learner.snapshot(t);
        if matches!(cfg.method, Method::EEwc | Method::EMas) && t + 1 < n {
            let m = learner.embedding().expect("embedding method");
            let fresh = if cfg.method == Method::EEwc {
                let fc = FisherConfig {
                    batch_size: cfg.batch_size,
                    margin: cfg.margin,
                    mining: cfg.mining,
                    variant: cfg.fisher_variant,
                    seed: cfg.seed.wrapping_add(t as u64),
                };
                estimate_fisher(m, &task.train, &fc)?
            } else {
                estimate_mas_importance(m, &task.train)?
            };
            importance = Some(match (importance.take(), cfg.importance_accumulation) {
                (Some(mut acc), ImportanceAccumulation::RunningMean) => {
                    acc.merge_running_mean(&fresh, estimates)?;
                    acc
                }
                _ => fresh,
            });
            estimates += 1;
        }

        run.evaluate(&learner, t)?;
        observe(&TaskEvent {
            task: t,
            learner: &learner,
            snapshot: &after,
            prototypes: (cfg.method != Method::Ft).then_some(&run.book),
            importance: importance.as_ref(),
        });
        before = after;
    }
    Ok(run.finish(started))
}

struct RunState<'a> {
    cfg: &'a MethodConfig,
    seq: &'a TaskSequence,
    record: RunRecord,
    book: PrototypeBook,
    pending_transition: Option<(f64, Vec<crate::sdc::Compensation>)>,
}

impl<'a> RunState<'a> {
    fn new(cfg: &'a MethodConfig, model: &ModelConfig, seq: &'a TaskSequence) -> Self {
        let n = seq.len();
        let class_names = seq.tasks()[0].train.class_names().to_vec();
        let record = RunRecord {
            method: cfg.method,
            label: cfg.label(),
            seed: cfg.seed,
            embedding_dim: model.embedding_dim,
            task_classes: seq.tasks().iter().map(|t| t.classes.clone()).collect(),
            class_names,
            accuracy: vec![None; n],
            overall_accuracy: vec![None; n],
            confusion: vec![None; n],
            prototype_traces: Vec::new(),
            transitions: Vec::new(),
            embedding_points: Vec::new(),
            task_stats: Vec::new(),
            final_prototypes: None,
            wall_time_secs: 0.0,
        };
        Self {
            cfg,
            seq,
            record,
            book: PrototypeBook::new(model.embedding_dim),
            pending_transition: None,
        }
    }

    fn predict(&self, learner: &Learner, x: &Tensor) -> Result<(Option<Tensor>, Vec<ClassId>)> {
        if self.cfg.method == Method::Ft {
            let m = learner.softmax().expect("softmax method");
            return Ok((None, m.predict_multihead(x)?));
        }
        let feats = learner.features(x)?;
        let pred = if self.cfg.renormalize_prototypes {
            ncm_classify(&feats, &self.book.renormalized())?
        } else {
            ncm_classify(&feats, &self.book)?
        };
        Ok((Some(feats), pred))
    }

    /// Fills row `t` and the diagnostics that depend on the current network.
    fn evaluate(&mut self, learner: &Learner, t: usize) -> Result<()> {
        let n = self.seq.len();
        let mut row = Vec::with_capacity(t + 1);
        let (mut truth, mut predicted) = (Vec::new(), Vec::new());
        let mut true_means: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
        for task in &self.seq.tasks()[..=t] {
            let x = task.test.to_tensor();
            let (feats, pred) = self.predict(learner, &x)?;
            let labels = task.test.labels();
            let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
            row.push(correct as f64 / labels.len() as f64);
            truth.extend_from_slice(labels);
            predicted.extend(pred);
            if let Some(f) = feats {
                true_means.extend(compute_prototypes(&f, labels, &task.classes)?);
                if task.index == 0 && f.shape()[1] == 2 {
                    self.record.embedding_points.push(plot_points(task, &f, t));
                }
            }
        }
        let cm = ConfusionMatrix::from_predictions(&self.seq.seen_classes(t), &truth, &predicted)?;
        self.record.overall_accuracy[t] = Some(cm.accuracy());
        self.record.confusion[t] = Some(cm);
        self.record.accuracy[t] = Some(row);

        if let Some((field_mean_norm, moves)) = self.pending_transition.take() {
            let moves = moves
                .into_iter()
                .map(|m| PrototypeMove {
                    true_mean: true_means[&m.class].clone(),
                    class: m.class,
                    before: m.before,
                    drift: m.drift,
                    after: m.after,
                    degenerate: m.degenerate,
                })
                .collect();
            self.record.transitions.push(TaskTransition {
                task: t,
                field_mean_norm,
                moves,
            });
        }
        for entry in self.book.iter() {
            let Some(mean) = true_means.get(&entry.class) else {
                continue;
            };
            let idx = match self.record.prototype_traces.iter().position(|p| p.class == entry.class) {
                Some(i) => i,
                None => {
                    self.record.prototype_traces.push(PrototypeTrace {
                        class: entry.class,
                        learned_at: entry.learned_at,
                        with_sdc: vec![None; n],
                        without_sdc: vec![None; n],
                    });
                    self.record.prototype_traces.len() - 1
                }
            };
            let trace = &mut self.record.prototype_traces[idx];
            trace.with_sdc[t] = Some(distance(&entry.vector, mean));
            trace.without_sdc[t] = Some(distance(&entry.origin, mean));
        }
        Ok(())
    }

    fn finish(mut self, started: Instant) -> RunRecord {
        if self.cfg.method != Method::Ft {
            self.record.final_prototypes = Some(self.book);
        }
        self.record.wall_time_secs = started.elapsed().as_secs_f64();
        self.record
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn plot_points(task: &Task, feats: &Tensor, t: usize) -> EmbeddingPoints {
    let data: &LabeledDataset = &task.test;
    let mut taken: BTreeMap<ClassId, usize> = BTreeMap::new();
    let (mut points, mut labels) = (Vec::new(), Vec::new());
    for (i, &l) in data.labels().iter().enumerate() {
        let count = taken.entry(l).or_insert(0);
        if *count < PLOT_POINTS_PER_CLASS {
            *count += 1;
            points.push(feats.row(i).to_vec());
            labels.push(l);
        }
    }
    EmbeddingPoints {
        task: t,
        points,
        labels,
    }
}
