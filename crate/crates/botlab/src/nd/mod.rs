//! Minimal numeric core: a dense row-major tensor, CSR sparse matrices, a
//! reverse-mode tape, plain gradient descent, a finite-difference gradient
//! checker, and a text checkpoint format with bit-exact reload.
//!
//! Everything here is generic over the scalar type; the rest of the crate
//! instantiates it at `f64` through the aliases in the crate root.

mod check;
mod ckpt;
mod optim;
mod sparse;
mod tape;
mod tensor;

pub use check::grad_check;
pub use ckpt::{checksum, Checkpoint};
pub use optim::{adam_step, sgd_step, sgd_step_momentum, AdamState, ParamId, ParamSet, Parameter};
pub use sparse::{Csr, SpPair};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::str::FromStr;

/// Floating scalar the core is generic over. `Display`/`FromStr` are part of
/// the contract because checkpoints rely on shortest round-trip formatting.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + Debug
    + Display
    + FromStr<Err = std::num::ParseFloatError>
    + std::iter::Sum
    + Default
    + 'static
{
    fn from_real(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("f64 conversion")
    }
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
