//! Class-incremental learning of metric embeddings with nearest-class-mean
//! classification and drift-compensated class prototypes.
//!
//! The crate is layered bottom-up:
//!
//! - [`nn`]: dense tensors and a reverse-mode autodiff graph
//! - [`models`]: MLP and small CNN embedding networks, softmax baselines and snapshots
//! - [`losses`]: triplet loss with mining, cross-entropy and the forgetting regularizers
//! - [`sdc`]: prototype bookkeeping and kernel-weighted drift estimation
//! - [`data`]: IDX and CSV readers, synthetic clusters and task splits
//! - [`harness`]: task-sequence runner, accuracy matrix and forgetting metrics
//! - [`report`]: experiment configs, comparison tables and SVG charts
//!
//! ```
//! use driftlab::data::gen_gaussian_clusters;
//! use driftlab::harness::{run_sequence, split_tasks, Method, MethodConfig, ModelConfig};
//! # use driftlab::data::TrainTest;
//!
//! let all = gen_gaussian_clusters(4, 20, 6, 0.2, 0).unwrap();
//! let (train, test): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % 2 == 0);
//! let data = TrainTest::new(all.subset(&train), all.subset(&test)).unwrap();
//! let tasks = split_tasks(&data, 2, None, &[], 0).unwrap();
//!
//! let cfg = MethodConfig { sdc: true, epochs: 2, lr: 1e-2, ..MethodConfig::new(Method::EFt) };
//! let model = ModelConfig { hidden: vec![16], embedding_dim: 2 };
//! let record = run_sequence(&cfg, &model, &tasks).unwrap();
//! assert_eq!(record.n_tasks(), 2);
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod nn;
pub mod report;
pub mod sdc;

pub use error::{Error, Result};
