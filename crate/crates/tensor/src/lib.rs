//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Everything is generic over [`Scalar`] (`f32` for training speed, `f64`
//! for finite-difference checks). Convolutions lower to im2col + GEMM.

pub mod kernels;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use ops::softmax_rows;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamSet};
pub use scalar::{gemm, MatRef, Scalar};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
