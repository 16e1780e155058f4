//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Parameters live in [`Tensor`]s. Each forward pass builds a fresh [`Tape`]:
//! parameters are copied in as leaves, operations are recorded in
//! topological order, and [`Tape::backward`] sweeps them in reverse.
//!
//! ```
//! use awl_core::autodiff::{Tape, Tensor};
//!
//! let x = Tensor::scalar(3.0).unwrap().with_grad();
//! let mut tape = Tape::new();
//! let xn = tape.leaf(&x);
//! let y = tape.mul(xn, xn).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(xn).unwrap(), &[6.0]);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::{gradient_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{NodeId, Tape};
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op} expects rank {expected}, got shape {shape}")]
    Rank {
        op: &'static str,
        shape: Shape,
        expected: usize,
    },
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape}")]
    LengthMismatch { shape: Shape, len: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("axis {axis} invalid for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("{op}: argument {value} outside domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
}

impl AutodiffError {
    pub(crate) fn mismatch(op: &'static str, left: &Shape, right: &Shape) -> Self {
        AutodiffError::ShapeMismatch {
            op,
            left: left.clone(),
            right: right.clone(),
        }
    }

    pub(crate) fn rank(op: &'static str, shape: &Shape, expected: usize) -> Self {
        AutodiffError::Rank {
            op,
            shape: shape.clone(),
            expected,
        }
    }
}
