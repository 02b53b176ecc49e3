//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is the value type. Differentiable computations are expressed on
//! [`Var`] handles recorded on a [`Tape`]; [`Tape::backward`] returns the
//! gradients. [`grad_check`] verifies any tape computation against central
//! differences.

mod conv;
mod gradcheck;
pub mod init;
mod ops;
mod tape;
mod value;

pub use conv::{conv2d_forward, Padding};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use ops::{gelu, gelu_grad, sigmoid, Activation};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;

pub(crate) use ops::flip_axis;
