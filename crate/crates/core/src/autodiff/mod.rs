//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each primitive as it is evaluated; [`Tape::backward`]
//! walks the record once in reverse. Values live on the tape, so a [`Var`] is
//! just a copyable handle.

mod gradcheck;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, GradReport};
pub(crate) use ops::softmax_in_place;
pub use optim::{Adam, Bound, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("function value is not finite")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
}
