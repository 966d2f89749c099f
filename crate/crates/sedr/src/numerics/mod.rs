//! Tensor engine: generic-scalar tape autodiff, parameter buffers, and a
//! finite-difference gradient checker.

mod gradcheck;
mod param;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use param::Param;
pub use scalar::{cosine, dot, l2_norm, Scalar};
pub use tape::{Tape, Tensor, TensorId};
