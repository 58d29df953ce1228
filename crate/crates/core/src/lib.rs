//! Spectral meta-learning for mixed linear regression.
//!
//! Tasks are small linear-regression problems whose regression vectors come
//! from a finite mixture `(W, s, p)`. The pipeline estimates the span of `W`
//! from many light tasks, clusters a few heavy tasks in that subspace,
//! classifies a second batch of light tasks against the clusters, refits each
//! component by least squares, and predicts on new tasks with MAP or
//! posterior-mean estimators. An EM baseline and evaluation metrics are
//! included for comparison.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the concrete instantiations.

pub mod classify;
pub mod cli;
pub mod cluster;
pub mod datagen;
pub mod em;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod rng;
mod scalar;
pub mod subspace;

pub use error::{Error, MetaViolation, Result};
pub use linalg::{Matrix, SymMatrix};
pub use model::{validate_meta, ClusterModel, FittedModel, MetaParams, PoolSizes, Subspace, TaskBatch, TaskPool};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type MetaParams64 = MetaParams<f64>;
pub type MetaParams32 = MetaParams<f32>;
pub type TaskBatch64 = TaskBatch<f64>;
pub type TaskBatch32 = TaskBatch<f32>;
pub type TaskPool64 = TaskPool<f64>;
pub type TaskPool32 = TaskPool<f32>;
pub type Subspace64 = Subspace<f64>;
pub type Subspace32 = Subspace<f32>;
pub type ClusterModel64 = ClusterModel<f64>;
pub type ClusterModel32 = ClusterModel<f32>;
pub type FittedModel64 = FittedModel<f64>;
pub type FittedModel32 = FittedModel<f32>;
