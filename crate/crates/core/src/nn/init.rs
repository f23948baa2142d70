use rand::Rng;

use crate::autodiff::{ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Registers a convolution kernel with uniform `±gain/√fan_in` entries.
pub(crate) fn conv_kernel<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: String,
    shape: Shape,
    gain: f64,
    rng: &mut R,
) -> Result<ParamId> {
    let fan_in = (shape.c * shape.h * shape.w).max(1) as f64;
    let bound = gain / fan_in.sqrt();
    store.add(name, Tensor::rand_uniform(shape, -bound, bound, rng))
}

/// Registers a `1×C×1×1` vector filled with `value`.
pub(crate) fn channel_vector<T: Scalar>(
    store: &mut ParamStore<T>,
    name: String,
    channels: usize,
    value: f64,
) -> Result<ParamId> {
    store.add(
        name,
        Tensor::full(Shape::new(1, channels, 1, 1), T::lit(value)),
    )
}

/// A kernel and its bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl ConvParams {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shape: Shape,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            kernel: conv_kernel(store, format!("{prefix}.weight"), shape, gain, rng)?,
            bias: channel_vector(store, format!("{prefix}.bias"), shape.n, 0.0)?,
        })
    }
}
