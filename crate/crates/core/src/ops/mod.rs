//! Forward kernels and their adjoints. The tape in [`crate::autodiff`] records
//! calls to these; they can also be used directly for eager evaluation.

pub mod conv;
pub mod elementwise;
pub mod histogram;
pub mod norm;
pub mod pool;
pub mod resample;

pub use conv::{Conv2dParams, ConvGeometry, Padding};
pub use elementwise::{BinaryKind, UnaryKind};
pub use pool::PoolKind;
pub use resample::Resample;
