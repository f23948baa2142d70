//! Elementwise kernels with the restricted broadcasting used by attention maps.
//!
//! An operand broadcasts against a `C×H×W` result only when its trailing dims are
//! `C×H×W`, `C×1×1` or `1×H×W`; its batch dim is either the result's or 1.

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    Relu,
    Abs,
    Square,
    Softplus,
    /// `sqrt(x + eps)`
    SqrtEps(f64),
    /// `scale * x + offset`
    Affine(f64, f64),
}

fn join(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, b) => Some(b),
        (a, 1) => Some(a),
        _ => None,
    }
}

fn allowed(operand: Shape, out: Shape) -> bool {
    let batch_ok = operand.n == out.n || operand.n == 1;
    let tail = (operand.c, operand.h, operand.w);
    batch_ok
        && (tail == (out.c, out.h, out.w) || tail == (out.c, 1, 1) || tail == (1, out.h, out.w))
}

pub fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mismatch = || Error::ShapeMismatch { op, lhs: a, rhs: b };
    let out = Shape::new(
        join(a.n, b.n).ok_or_else(mismatch)?,
        join(a.c, b.c).ok_or_else(mismatch)?,
        join(a.h, b.h).ok_or_else(mismatch)?,
        join(a.w, b.w).ok_or_else(mismatch)?,
    );
    if allowed(a, out) && allowed(b, out) {
        Ok(out)
    } else {
        Err(mismatch())
    }
}

#[derive(Clone, Copy)]
struct Strides([usize; 4]);

impl Strides {
    fn broadcast(s: Shape) -> Self {
        let dense = [s.c * s.h * s.w, s.h * s.w, s.w, 1];
        let dims = s.dims();
        let mut st = [0; 4];
        for i in 0..4 {
            st[i] = if dims[i] == 1 { 0 } else { dense[i] };
        }
        Self(st)
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        n * self.0[0] + c * self.0[1] + y * self.0[2] + x * self.0[3]
    }
}

fn for_each_broadcast(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let (sa, sb) = (Strides::broadcast(a), Strides::broadcast(b));
    let mut o = 0;
    for n in 0..out.n {
        for c in 0..out.c {
            for y in 0..out.h {
                for x in 0..out.w {
                    f(o, sa.offset(n, c, y, x), sb.offset(n, c, y, x));
                    o += 1;
                }
            }
        }
    }
}

pub fn binary_forward<T: Scalar>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape("binary", a.shape(), b.shape())?;
    let (x, y) = (a.data(), b.data());
    let mut out = vec![T::zero(); out_shape.numel()];
    for_each_broadcast(out_shape, a.shape(), b.shape(), |o, i, j| {
        out[o] = match kind {
            BinaryKind::Add => x[i] + y[j],
            BinaryKind::Sub => x[i] - y[j],
            BinaryKind::Mul => x[i] * y[j],
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Gradients of a broadcast binary op, reduced back to each operand's shape.
pub fn binary_backward<T: Scalar>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
    need: (bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (x, y, g) = (a.data(), b.data(), grad_out.data());
    let mut ga = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gb = need.1.then(|| vec![T::zero(); y.len()]);
    for_each_broadcast(grad_out.shape(), a.shape(), b.shape(), |o, i, j| {
        let (da, db) = match kind {
            BinaryKind::Add => (g[o], g[o]),
            BinaryKind::Sub => (g[o], -g[o]),
            BinaryKind::Mul => (g[o] * y[j], g[o] * x[i]),
        };
        if let Some(ga) = ga.as_mut() {
            ga[i] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[j] += db;
        }
    });
    (
        ga.map(|d| Tensor::from_vec(a.shape(), d).expect("grad shape")),
        gb.map(|d| Tensor::from_vec(b.shape(), d).expect("grad shape")),
    )
}

pub fn unary_forward<T: Scalar>(kind: UnaryKind, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        UnaryKind::Sigmoid => x.map(scalar::sigmoid),
        UnaryKind::Relu => x.map(|v| v.max(T::zero())),
        UnaryKind::Abs => x.map(|v| v.abs()),
        UnaryKind::Square => x.map(|v| v * v),
        UnaryKind::Softplus => x.map(scalar::softplus),
        UnaryKind::SqrtEps(eps) => {
            let eps = T::lit(eps);
            x.map(|v| (v + eps).sqrt())
        }
        UnaryKind::Affine(s, o) => {
            let (s, o) = (T::lit(s), T::lit(o));
            x.map(|v| s * v + o)
        }
    }
}

/// `grad_in = grad_out * f'(x)`, using the saved output `y` where convenient.
pub fn unary_backward<T: Scalar>(
    kind: UnaryKind,
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let two = T::lit(2.0);
    let data: Vec<T> = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&x, &y), &g)| match kind {
            UnaryKind::Sigmoid => g * y * (T::one() - y),
            UnaryKind::Relu => {
                if x > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            UnaryKind::Abs => {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }
            UnaryKind::Square => g * two * x,
            UnaryKind::Softplus => g * scalar::sigmoid(x),
            UnaryKind::SqrtEps(_) => g / (two * y),
            UnaryKind::Affine(s, _) => g * T::lit(s),
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("unary grad shape")
}

/// Splits channels into halves `(a, b)` and returns `a ⊙ b`.
pub fn simple_gate_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if !s.c.is_multiple_of(2) {
        return Err(Error::arg(
            "simple_gate",
            format!("odd channel count {}", s.c),
        ));
    }
    let half = s.c / 2;
    let out_shape = Shape::new(s.n, half, s.h, s.w);
    let plane = s.plane();
    let d = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..half {
            let a = s.index(n, c, 0, 0);
            let b = s.index(n, c + half, 0, 0);
            out.extend((0..plane).map(|i| d[a + i] * d[b + i]));
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn simple_gate_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let half = s.c / 2;
    let plane = s.plane();
    let (d, gd) = (x.data(), g.data());
    let gs = g.shape();
    let mut gx = vec![T::zero(); d.len()];
    for n in 0..s.n {
        for c in 0..half {
            let a = s.index(n, c, 0, 0);
            let b = s.index(n, c + half, 0, 0);
            let o = gs.index(n, c, 0, 0);
            for i in 0..plane {
                gx[a + i] = gd[o + i] * d[b + i];
                gx[b + i] = gd[o + i] * d[a + i];
            }
        }
    }
    Tensor::from_vec(s, gx).expect("gate grad shape")
}

/// Concatenates along the channel axis.
pub fn concat_forward<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::arg("concat", "no inputs"))?
        .shape();
    let mut c = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: s,
            });
        }
        c += s.c;
    }
    let out_shape = Shape::new(first.n, c, first.h, first.w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            let len = p.shape().item();
            out.extend_from_slice(&p.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn concat_backward<T: Scalar>(shapes: &[Shape], g: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut parts: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.numel()))
        .collect();
    let gd = g.data();
    let mut off = 0;
    for _ in 0..g.shape().n {
        for (p, s) in parts.iter_mut().zip(shapes) {
            let len = s.item();
            p.extend_from_slice(&gd[off..off + len]);
            off += len;
        }
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(d, &s)| Tensor::from_vec(s, d).expect("concat grad shape"))
        .collect()
}
