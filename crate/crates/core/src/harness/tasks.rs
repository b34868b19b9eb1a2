use rand::seq::SliceRandom;

use crate::data::{ClassId, LabeledDataset, TrainTest};
use crate::error::{Error, Result};
use crate::models::seeded_rng;

/// One stage of a class-incremental sequence.
#[derive(Clone, Debug)]
pub struct Task {
    pub index: usize,
    /// Global class ids, in the order drawn by the split.
    pub classes: Vec<ClassId>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Tasks over pairwise disjoint class sets.
#[derive(Clone, Debug)]
pub struct TaskSequence {
    tasks: Vec<Task>,
    class_order: Vec<ClassId>,
    held_out: Option<LabeledDataset>,
}

impl TaskSequence {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Every class of the sequence, task by task.
    pub fn class_order(&self) -> &[ClassId] {
        &self.class_order
    }

    /// Classes of tasks `0..=t`.
    pub fn seen_classes(&self, t: usize) -> Vec<ClassId> {
        self.tasks[..=t].iter().flat_map(|task| task.classes.iter().copied()).collect()
    }

    /// Training data of classes kept out of the sequence, used for
    /// pretraining.
    pub fn held_out(&self) -> Option<&LabeledDataset> {
        self.held_out.as_ref()
    }

    /// Union of every task's training data.
    pub fn joint_train(&self) -> Result<LabeledDataset> {
        let mut it = self.tasks.iter();
        let first = it.next().ok_or_else(|| Error::MissingData("empty task sequence".into()))?;
        it.try_fold(first.train.clone(), |acc, t| acc.concat(&t.train))
    }
}

/// Shuffles the classes with `seed` and cuts them into `n_tasks` groups.
///
/// Without `first_task_fraction` the classes must divide evenly among the
/// tasks. With it, the first task takes `round(fraction · K)` classes and
/// the rest must divide evenly among the remaining `n_tasks − 1` tasks.
/// Classes listed in `held_out` are removed first and their training data
/// kept aside.
pub fn split_tasks(
    data: &TrainTest,
    n_tasks: usize,
    first_task_fraction: Option<f64>,
    held_out: &[ClassId],
    seed: u64,
) -> Result<TaskSequence> {
    let all = data.train.num_classes();
    if let Some(&bad) = held_out.iter().find(|&&c| c >= all) {
        return Err(Error::InvalidArgument(format!("held-out class {bad} does not exist ({all} classes)")));
    }
    let mut classes: Vec<ClassId> = (0..all).filter(|c| !held_out.contains(c)).collect();
    let k = classes.len();
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("need at least one task".into()));
    }
    if n_tasks > k {
        return Err(Error::InvalidArgument(format!("{n_tasks} tasks requested but only {k} classes")));
    }
    let sizes = task_sizes(k, n_tasks, first_task_fraction)?;
    classes.shuffle(&mut seeded_rng(seed, 0x5eed));

    let mut tasks = Vec::with_capacity(n_tasks);
    let mut start = 0;
    for (index, size) in sizes.into_iter().enumerate() {
        let group = classes[start..start + size].to_vec();
        start += size;
        let train = data.train.filter_classes(&group);
        let test = data.test.filter_classes(&group);
        for &c in &group {
            if !train.labels().contains(&c) {
                return Err(Error::MissingData(format!("class {c} has no training samples")));
            }
            if !test.labels().contains(&c) {
                return Err(Error::MissingData(format!("class {c} has no test samples")));
            }
        }
        tasks.push(Task {
            index,
            classes: group,
            train,
            test,
        });
    }
    let held_out = if held_out.is_empty() {
        None
    } else {
        Some(data.train.filter_classes(held_out))
    };
    Ok(TaskSequence {
        tasks,
        class_order: classes,
        held_out,
    })
}

fn task_sizes(k: usize, n_tasks: usize, first_task_fraction: Option<f64>) -> Result<Vec<usize>> {
    match first_task_fraction {
        None => {
            if k % n_tasks != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{k} classes do not divide evenly into {n_tasks} tasks"
                )));
            }
            Ok(vec![k / n_tasks; n_tasks])
        }
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidArgument(format!("first task fraction must lie in (0, 1), got {f}")));
            }
            let first = (f * k as f64).round() as usize;
            if n_tasks == 1 {
                return Err(Error::InvalidArgument("a first-task fraction needs at least two tasks".into()));
            }
            let rest = k.saturating_sub(first);
            if first == 0 || rest == 0 || rest % (n_tasks - 1) != 0 {
                return Err(Error::InvalidArgument(format!(
                    "first task takes {first} of {k} classes; the remaining {rest} do not divide evenly into {} tasks",
                    n_tasks - 1
                )));
            }
            let mut sizes = vec![first];
            sizes.extend(std::iter::repeat(rest / (n_tasks - 1)).take(n_tasks - 1));
            Ok(sizes)
        }
    }
}
