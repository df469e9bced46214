//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use params::{Bound, ParamSet};
pub use tape::{softmax_slice, Gradients, Tape, Var};
pub use tensor::Tensor;
