//! Minimal reverse-mode differentiation over dense `f64` arrays.

mod gradcheck;
mod optim;
mod params;
pub mod special;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradients, evaluate, grad_check};
pub use optim::AdamW;
pub use params::{glorot, zero_bias, ParamSet};
pub use tape::{Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
