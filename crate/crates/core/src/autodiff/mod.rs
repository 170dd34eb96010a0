//! Reverse-mode automatic differentiation over dense `f64` matrices.

pub mod kernels;
mod param;
mod tape;
mod tensor;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
