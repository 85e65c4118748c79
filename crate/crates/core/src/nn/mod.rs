//! Tensors, reverse-mode differentiation, loss, and optimization.

pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use optim::{noam_learning_rate, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Scalar, Tensor, TensorF32};
