//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor) ops.

pub mod gradcheck;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_with_params, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use tape::{GlobalStat, Gradients, Tape, Var};
