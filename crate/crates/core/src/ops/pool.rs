//! Global pooling along the channel axis (`GAP_s`, `GMP_s`) and the spatial axes (`GAP_c`).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// Mean across channels, giving an `N×1×H×W` spatial map.
    SpatialAvg,
    /// Max across channels, giving an `N×1×H×W` spatial map.
    SpatialMax,
    /// Mean across H×W, giving an `N×C×1×1` channel vector.
    ChannelAvg,
}

/// Forward result; `argmax` holds the winning channel for [`PoolKind::SpatialMax`].
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Option<Vec<usize>>,
}

pub fn pool_forward<T: Scalar>(kind: PoolKind, x: &Tensor<T>) -> Pooled<T> {
    let s = x.shape();
    let d = x.data();
    match kind {
        PoolKind::SpatialAvg | PoolKind::SpatialMax => {
            let out_shape = Shape::new(s.n, 1, s.h, s.w);
            let plane = s.plane();
            let mut out = Vec::with_capacity(out_shape.numel());
            let mut arg = Vec::new();
            let inv_c = T::one() / T::from_usize_exact(s.c);
            for n in 0..s.n {
                for p in 0..plane {
                    let at = |c: usize| d[s.index(n, c, 0, 0) + p];
                    if kind == PoolKind::SpatialAvg {
                        let sum = (0..s.c).fold(T::zero(), |a, c| a + at(c));
                        out.push(sum * inv_c);
                    } else {
                        let mut best = 0;
                        for c in 1..s.c {
                            if at(c) > at(best) {
                                best = c;
                            }
                        }
                        out.push(at(best));
                        arg.push(best);
                    }
                }
            }
            Pooled {
                output: Tensor::from_vec(out_shape, out).expect("pool shape"),
                argmax: (kind == PoolKind::SpatialMax).then_some(arg),
            }
        }
        PoolKind::ChannelAvg => {
            let out_shape = Shape::new(s.n, s.c, 1, 1);
            let inv = T::one() / T::from_usize_exact(s.plane());
            let out = d
                .chunks(s.plane())
                .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) * inv)
                .collect();
            Pooled {
                output: Tensor::from_vec(out_shape, out).expect("pool shape"),
                argmax: None,
            }
        }
    }
}

pub fn pool_backward<T: Scalar>(
    kind: PoolKind,
    input_shape: Shape,
    argmax: Option<&[usize]>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let s = input_shape;
    let gd = g.data();
    let mut gx = vec![T::zero(); s.numel()];
    let plane = s.plane();
    match kind {
        PoolKind::SpatialAvg => {
            let inv_c = T::one() / T::from_usize_exact(s.c);
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = s.index(n, c, 0, 0);
                    for p in 0..plane {
                        gx[base + p] = gd[n * plane + p] * inv_c;
                    }
                }
            }
        }
        PoolKind::SpatialMax => {
            let arg = argmax.expect("max pool saves argmax");
            for n in 0..s.n {
                for p in 0..plane {
                    let k = n * plane + p;
                    gx[s.index(n, arg[k], 0, 0) + p] = gd[k];
                }
            }
        }
        PoolKind::ChannelAvg => {
            let inv = T::one() / T::from_usize_exact(plane);
            for (i, chunk) in gx.chunks_mut(plane).enumerate() {
                let v = gd[i] * inv;
                chunk.iter_mut().for_each(|o| *o = v);
            }
        }
    }
    Tensor::from_vec(s, gx).expect("pool grad shape")
}
