//! Minimal reverse-mode automatic differentiation over dense `f32` arrays,
//! named parameter storage and the Adam optimizer.

mod gradcheck;
mod kernels;
mod store;
mod suite;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
pub use store::{AdamConfig, ParameterStore};
pub use suite::{op_gradient_suite, GradCase};
pub use tape::{Tape, Var, BCE_CLAMP, CE_CLAMP};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("parameter {0:?} has no gradient")]
    MissingGradient(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),
}
