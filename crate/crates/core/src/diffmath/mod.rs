//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! Graphs are built on a [`Tape`] by calling operation methods; every
//! operation returns a [`Var`] handle. Scalars are `1×1` arrays and vectors
//! are `1×n` rows. Broadcasting is limited to scalar-with-array in the
//! elementwise operations and row-vector-plus-matrix in [`Tape::add_row`].

mod check;
mod ops;
mod tape;

pub use check::{finite_difference_check, gradient_of};
pub use ops::{softplus, softplus_inv};
pub use tape::{sigmoid, CustomOp, Tape, TensorNode, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, DiffError>;
