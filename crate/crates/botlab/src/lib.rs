//! Desk-scale laboratory for single-node injection attacks on graph-based
//! social bot detectors.
//!
//! The pieces, bottom up:
//!
//! - [`nd`]: dense/sparse tensors, a reverse-mode tape, SGD, gradient
//!   checking, text checkpoints.
//! - [`graph`]: heterogeneous social graphs (friend/follow relations),
//!   synthesis, sampling, a line-oriented file format.
//! - [`encoder`]: the four-way user attribute encoder shared by all models.
//! - [`detector`]: relational GNN bot detectors (substitutes and victims).
//! - [`injector`]: the attack: one generated node, one generated edge,
//!   trained against a frozen substitute.
//! - [`recovery`]: inversion of generated embeddings back to plausible raw
//!   attributes under per-dataset constraint profiles.
//! - [`harness`]: seeded end-to-end experiments, ablations, transfer runs,
//!   parameter studies, and deterministic reports.

#![forbid(unsafe_code)]

pub mod error;
pub mod nd;

pub mod detector;
pub mod encoder;
pub mod graph;
pub mod harness;
pub mod injector;
pub mod recovery;

pub use error::{Error, Result};

/// Working scalar for the whole pipeline. The numeric core stays generic;
/// everything downstream runs at double precision.
pub type Real = f64;
pub type Tensor = nd::Tensor<Real>;
pub type Tape = nd::Tape<Real>;
pub type ParamSet = nd::ParamSet<Real>;
pub type Checkpoint = nd::Checkpoint<Real>;
pub type SpPair = nd::SpPair<Real>;
pub type Csr = nd::Csr<Real>;
