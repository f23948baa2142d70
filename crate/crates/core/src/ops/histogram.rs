//! Soft (linearly interpolated) per-channel histograms over `[0, 1]`.
//!
//! Bin `k` of `K` is centred at `(k + 0.5) / K`. A value spreads its unit mass
//! over the two nearest centres with triangular weights one bin wide; values
//! beyond the outermost centres fall entirely into the edge bin.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[inline]
fn split<T: Scalar>(v: T, bins: usize) -> (usize, usize, T) {
    let k = T::from_usize_exact(bins);
    let u = v * k - T::lit(0.5);
    if u <= T::zero() {
        return (0, 0, T::zero());
    }
    let last = T::from_usize_exact(bins - 1);
    if u >= last {
        return (bins - 1, bins - 1, T::zero());
    }
    let lo = u.floor();
    let i = lo.to_usize().unwrap_or(0);
    (i, i + 1, u - lo)
}

/// `N×C×H×W` → `N×C×1×K`, each row summing to one.
pub fn soft_histogram_forward<T: Scalar>(x: &Tensor<T>, bins: usize) -> Result<Tensor<T>> {
    if bins < 2 {
        return Err(Error::arg("soft_histogram", "need at least two bins"));
    }
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::shape("soft_histogram", "empty image"));
    }
    let inv = T::one() / T::from_usize_exact(s.plane());
    let out_shape = Shape::new(s.n, s.c, 1, bins);
    let mut out = vec![T::zero(); out_shape.numel()];
    for (row, plane) in out.chunks_mut(bins).zip(x.data().chunks(s.plane())) {
        for &v in plane {
            let (lo, hi, f) = split(v, bins);
            row[lo] += (T::one() - f) * inv;
            row[hi] += f * inv;
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn soft_histogram_backward<T: Scalar>(x: &Tensor<T>, bins: usize, g: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let scale = T::from_usize_exact(bins) / T::from_usize_exact(s.plane());
    let mut gx = Vec::with_capacity(x.numel());
    for (grow, plane) in g.data().chunks(bins).zip(x.data().chunks(s.plane())) {
        for &v in plane {
            let (lo, hi, _) = split(v, bins);
            gx.push(if lo == hi {
                T::zero()
            } else {
                (grow[hi] - grow[lo]) * scale
            });
        }
    }
    Tensor::from_vec(s, gx).expect("histogram grad shape")
}
