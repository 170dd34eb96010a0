// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
mod parallel;
pub mod training;

pub use autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
pub use error::{Error, Result};
