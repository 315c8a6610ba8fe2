//! Dense double-precision tensors, a tape-style computation graph with
//! reverse-mode differentiation, Adam, and finite-difference gradient
//! checking.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
