//! Per-item normalization over (C, H, W).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean and reciprocal standard deviation of one batch item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    pub mean: T,
    pub rstd: T,
}

/// Two-pass per-item moments; the variance is the biased (population) one.
pub fn item_moments<T: Scalar>(x: &Tensor<T>, eps: f64) -> Result<Vec<Moments<T>>> {
    if x.numel() == 0 {
        return Err(Error::shape("layer_norm", "zero-size tensor"));
    }
    if !(eps > 0.0) {
        return Err(Error::arg("layer_norm", "eps must be positive"));
    }
    let len = x.shape().item();
    let inv = T::one() / T::from_usize_exact(len);
    Ok(x.data()
        .chunks(len)
        .map(|item| {
            let mean = item.iter().fold(T::zero(), |a, &v| a + v) * inv;
            let var = item
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv;
            Moments {
                mean,
                rstd: T::one() / (var + T::lit(eps)).sqrt(),
            }
        })
        .collect())
}

pub fn normalize_forward<T: Scalar>(x: &Tensor<T>, moments: &[Moments<T>]) -> Tensor<T> {
    let len = x.shape().item();
    let data = x
        .data()
        .chunks(len)
        .zip(moments)
        .flat_map(|(item, m)| item.iter().map(move |&v| (v - m.mean) * m.rstd))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("norm shape")
}

/// Backward of the normalization. With `frozen` the moments are treated as constants.
pub fn normalize_backward<T: Scalar>(
    normalized: &Tensor<T>,
    moments: &[Moments<T>],
    g: &Tensor<T>,
    frozen: bool,
) -> Tensor<T> {
    let len = g.shape().item();
    let inv = T::one() / T::from_usize_exact(len);
    let mut out = Vec::with_capacity(g.numel());
    for ((gi, xi), m) in g
        .data()
        .chunks(len)
        .zip(normalized.data().chunks(len))
        .zip(moments)
    {
        if frozen {
            out.extend(gi.iter().map(|&v| v * m.rstd));
            continue;
        }
        let g_mean = gi.iter().fold(T::zero(), |a, &v| a + v) * inv;
        let gx_mean = gi.iter().zip(xi).fold(T::zero(), |a, (&v, &x)| a + v * x) * inv;
        out.extend(
            gi.iter()
                .zip(xi)
                .map(|(&v, &x)| m.rstd * (v - g_mean - x * gx_mean)),
        );
    }
    Tensor::from_vec(g.shape(), out).expect("norm grad shape")
}
