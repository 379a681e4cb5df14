//! Dense tensors, a dynamic reverse-mode tape, and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, max_relative_error};
pub use graph::{atan2_phase, sigmoid, silu, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
