//! Minimal reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{backward_into, Graph, Var};
pub use optim::{AdamWConfig, AdamWState};
pub use scalar::Scalar;
pub use tensor::{ParamSet, Tensor};
