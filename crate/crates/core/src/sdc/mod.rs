//! Class prototypes, nearest-class-mean classification and semantic drift
//! compensation.
//!
//! After each task the embedding network has moved. The drift of the
//! current task's samples between the previous and current network is a
//! sparse vector field; interpolating it with a Gaussian kernel at each old
//! prototype estimates how that prototype moved, without revisiting any old
//! data.

mod book;
mod drift;

pub use book::{compute_prototypes, ncm_classify, PrototypeBook, PrototypeEntry};
pub use drift::{
    collect_drift, compensate, interpolate_drift, true_drift, Compensation, DriftField, Interpolation, KernelConfig,
};
