//! Mean-reverting SDE image restoration with coarse-to-fine convolutional blocks.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common precisions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod sde;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
