//! Core library for meta-training in-context learners on augmented task
//! distributions: deterministic tensor math with reverse-mode autodiff,
//! splittable counter-based randomness, dataset pipelines, sequence models
//! that lift datasets into supervised token streams, meta-optimization, and
//! the evaluation protocols built on top.
//!
//! Everything is single-threaded and reduction order is fixed, so a run is
//! reproducible down to the bit for a given seed and configuration.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod meta;
pub mod models;
pub mod optim;
pub mod rng;
pub mod store;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId, OpKind};
pub use store::ParamStore;
pub use tensor::{Dtype, Scalar, Tensor};
