//! Weight-sharing encoder search for optical flow.
//!
//! The crate builds a super-network over a separable-convolution search
//! space, trains it one sampled sub-network at a time (optionally distilling
//! a frozen teacher's feature pyramid through channel-wise alignment), and
//! runs a parameter-constrained evolutionary search over the genomes.
//!
//! Numerical code is generic over [`Scalar`]; training uses `f32` and the
//! gradient checks reuse the same paths in `f64`.

pub mod autodiff;
pub mod distill;
pub mod evolve;
mod error;
pub mod flow_task;
mod scalar;
pub mod search_space;
pub mod selftest;
pub mod supernet;
pub mod train;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result, Violation};
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
