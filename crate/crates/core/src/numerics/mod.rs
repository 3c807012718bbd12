//! Tensor arithmetic, reverse-mode differentiation, initialization and Adam.
//!
//! Training arithmetic is `f64`; [`DoubleDouble`] backs the reference
//! evaluations used for finite differences.

mod adam;
mod extended;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use extended::{DoubleDouble, Real};
pub use gradcheck::{finite_difference_check, finite_difference_report, relative_error};
pub use tape::{sigmoid_scalar, Gradients, Tape, Var, SIGMOID_CLAMP};
pub use tensor::Tensor;
