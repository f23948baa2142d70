//! Factor-2 bilinear resampling (half-pixel centers, edge clamped).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Up2x,
    Down2x,
}

/// For each output coordinate, the two source taps and their weights.
fn taps(kind: Resample, in_len: usize) -> Vec<[(usize, f64); 2]> {
    match kind {
        Resample::Down2x => (0..in_len / 2)
            .map(|o| [(2 * o, 0.5), (2 * o + 1, 0.5)])
            .collect(),
        Resample::Up2x => (0..in_len * 2)
            .map(|o| {
                let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                let f = src - i0 as f64;
                [(i0, 1.0 - f), (i1, f)]
            })
            .collect(),
    }
}

pub fn output_shape(kind: Resample, s: Shape) -> Result<Shape> {
    match kind {
        Resample::Up2x => Ok(Shape::new(s.n, s.c, s.h * 2, s.w * 2)),
        Resample::Down2x => {
            if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
                return Err(Error::shape(
                    "interp2x_down",
                    format!("odd or empty spatial dims in {s}"),
                ));
            }
            Ok(Shape::new(s.n, s.c, s.h / 2, s.w / 2))
        }
    }
}

pub fn resample_forward<T: Scalar>(kind: Resample, x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = output_shape(kind, s)?;
    let (ty, tx) = (taps(kind, s.h), taps(kind, s.w));
    let d = x.data();
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            for wy in &ty {
                for wx in &tx {
                    let mut acc = T::zero();
                    for &(iy, ay) in wy {
                        for &(ix, ax) in wx {
                            acc += d[base + iy * s.w + ix] * T::lit(ay * ax);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn resample_backward<T: Scalar>(
    kind: Resample,
    input_shape: Shape,
    g: &Tensor<T>,
) -> Tensor<T> {
    let s = input_shape;
    let (ty, tx) = (taps(kind, s.h), taps(kind, s.w));
    let gd = g.data();
    let mut gx = vec![T::zero(); s.numel()];
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            for wy in &ty {
                for wx in &tx {
                    for &(iy, ay) in wy {
                        for &(ix, ax) in wx {
                            gx[base + iy * s.w + ix] += gd[o] * T::lit(ay * ax);
                        }
                    }
                    o += 1;
                }
            }
        }
    }
    Tensor::from_vec(s, gx).expect("resample grad shape")
}
