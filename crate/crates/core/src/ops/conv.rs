//! Grouped, dilated, strided 2-D cross-correlation and its adjoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Keeps H×W for stride 1; requires odd kernel sizes.
    Same,
    /// Zero padding `(rows, cols)` on each side.
    Explicit(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            groups: 1,
            padding: Padding::Same,
        }
    }
}

impl Conv2dParams {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn dilated(dilation: usize, groups: usize) -> Self {
        Self {
            dilation,
            groups,
            ..Self::default()
        }
    }
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub kernel: Shape,
    pub output: Shape,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn resolve(
        input: Shape,
        kernel: Shape,
        bias: Option<Shape>,
        p: Conv2dParams,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if p.stride == 0 || p.dilation == 0 || p.groups == 0 {
            return Err(Error::arg(
                OP,
                "stride, dilation and groups must be positive",
            ));
        }
        if !input.c.is_multiple_of(p.groups) || !kernel.n.is_multiple_of(p.groups) {
            return Err(Error::arg(
                OP,
                format!(
                    "groups {} must divide input channels {} and output channels {}",
                    p.groups, input.c, kernel.n
                ),
            ));
        }
        if kernel.c != input.c / p.groups {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: input,
                rhs: kernel,
            });
        }
        if let Some(b) = bias {
            if b != Shape::new(1, kernel.n, 1, 1) {
                return Err(Error::ShapeMismatch {
                    op: OP,
                    lhs: kernel,
                    rhs: b,
                });
            }
        }
        let (pad_h, pad_w) = match p.padding {
            Padding::Same => {
                if kernel.h.is_multiple_of(2) || kernel.w.is_multiple_of(2) {
                    return Err(Error::arg(OP, "same padding needs an odd kernel"));
                }
                (
                    p.dilation * (kernel.h - 1) / 2,
                    p.dilation * (kernel.w - 1) / 2,
                )
            }
            Padding::Explicit(ph, pw) => (ph, pw),
        };
        let span_h = p.dilation * (kernel.h - 1) + 1;
        let span_w = p.dilation * (kernel.w - 1) + 1;
        if input.h + 2 * pad_h < span_h || input.w + 2 * pad_w < span_w {
            return Err(Error::shape(
                OP,
                format!("kernel {kernel} larger than padded input {input}"),
            ));
        }
        let out_h = (input.h + 2 * pad_h - span_h) / p.stride + 1;
        let out_w = (input.w + 2 * pad_w - span_w) / p.stride + 1;
        Ok(Self {
            input,
            kernel,
            output: Shape::new(input.n, kernel.n, out_h, out_w),
            stride: p.stride,
            dilation: p.dilation,
            groups: p.groups,
            pad_h,
            pad_w,
        })
    }

    /// Visits every (output index, input index, kernel index) tap that lands inside the input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (is, ks, os) = (self.input, self.kernel, self.output);
        let in_per_group = ks.c;
        let out_per_group = ks.n / self.groups;
        for n in 0..os.n {
            for oc in 0..os.c {
                let g = oc / out_per_group;
                for icg in 0..in_per_group {
                    let ic = g * in_per_group + icg;
                    for ky in 0..ks.h {
                        for kx in 0..ks.w {
                            let ki = ks.index(oc, icg, ky, kx);
                            for oy in 0..os.h {
                                let iy = (oy * self.stride + ky * self.dilation) as isize
                                    - self.pad_h as isize;
                                if iy < 0 || iy >= is.h as isize {
                                    continue;
                                }
                                for ox in 0..os.w {
                                    let ix = (ox * self.stride + kx * self.dilation) as isize
                                        - self.pad_w as isize;
                                    if ix < 0 || ix >= is.w as isize {
                                        continue;
                                    }
                                    f(
                                        os.index(n, oc, oy, ox),
                                        is.index(n, ic, iy as usize, ix as usize),
                                        ki,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Tensor<T> {
    let os = geom.output;
    let mut out = vec![T::zero(); os.numel()];
    if let Some(b) = bias {
        let plane = os.plane();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let v = b.data()[i % os.c];
            chunk.iter_mut().for_each(|o| *o = v);
        }
    }
    let (x, k) = (input.data(), kernel.data());
    geom.for_each_tap(|o, i, w| out[o] += x[i] * k[w]);
    Tensor::from_vec(os, out).expect("conv output shape")
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gk = need.1.then(|| vec![T::zero(); k.len()]);
    if need.0 || need.1 {
        geom.for_each_tap(|o, i, w| {
            if let Some(gx) = gx.as_mut() {
                gx[i] += g[o] * k[w];
            }
            if let Some(gk) = gk.as_mut() {
                gk[w] += g[o] * x[i];
            }
        });
    }
    let gb = need.2.then(|| {
        let os = geom.output;
        let mut gb = vec![T::zero(); os.c];
        for (i, chunk) in g.chunks(os.plane()).enumerate() {
            gb[i % os.c] += chunk.iter().fold(T::zero(), |a, &v| a + v);
        }
        Tensor::from_vec(Shape::new(1, os.c, 1, 1), gb).expect("bias grad shape")
    });
    ConvGrads {
        input: gx.map(|d| Tensor::from_vec(geom.input, d).expect("input grad shape")),
        kernel: gk.map(|d| Tensor::from_vec(geom.kernel, d).expect("kernel grad shape")),
        bias: gb,
    }
}
