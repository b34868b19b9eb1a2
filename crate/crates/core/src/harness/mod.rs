//! Class-incremental experiment driver: task splits, per-task training for
//! every method, drift compensation between tasks, evaluation and metrics.

mod config;
mod metrics;
mod record;
mod run;
mod tasks;
mod train;

pub use config::{ImportanceAccumulation, Method, MethodConfig, ModelConfig};
pub use metrics::{avg_forgetting, avg_incremental_accuracy, AccuracyMatrix, ConfusionMatrix};
pub use record::{
    a_matrix_csv, read_a_matrix, read_record, write_run_files, EmbeddingPoints, PrototypeMove, PrototypeTrace,
    PrototypesFile, RunRecord, TaskStats, TaskTransition,
};
pub use run::{run_sequence, run_sequence_observed, TaskEvent};
pub use tasks::{split_tasks, Task, TaskSequence};
pub use train::{train_task, Anchor, Learner, PRETRAIN_TASK};
