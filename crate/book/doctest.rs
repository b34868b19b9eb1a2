//! Compiles every chapter of the guide as rustdoc so `cargo test --doc`
//! runs the code listings.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("src/networks.md")]
pub mod networks {}
#[doc = include_str!("src/triplets.md")]
pub mod triplets {}
#[doc = include_str!("src/prototypes.md")]
pub mod prototypes {}
#[doc = include_str!("src/drift.md")]
pub mod drift {}
#[doc = include_str!("src/regularizers.md")]
pub mod regularizers {}
#[doc = include_str!("src/harness.md")]
pub mod harness {}
#[doc = include_str!("src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
