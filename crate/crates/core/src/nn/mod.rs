//! Minimal layer engine for the two fixed architectures.
//!
//! Every layer is a pair of free functions (forward, backward) over
//! row-major [`Tensor`]s laid out time-major, channel-minor (`[L, C]`).
//! Kernels are generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod param;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use param::{Gradients, Param, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
