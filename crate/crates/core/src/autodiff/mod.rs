//! Minimal reverse-mode automatic differentiation over dense tensors.

pub mod check;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use ops::conv_out_size;
pub use optim::{Adam, AdamConfig, OptimError, StepReport};
pub use params::{Param, ParamStore};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
