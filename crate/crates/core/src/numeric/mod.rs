//! Dense tensors, network primitives, Adam and gradient verification.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_gradient, GradCheckReport};
pub use params::{uniform, xavier, Gradients, ParameterSet};
pub use tensor::Tensor;
