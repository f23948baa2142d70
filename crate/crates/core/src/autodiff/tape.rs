//! Single-owner recording tape for reverse-mode differentiation.
//!
//! Every op evaluates eagerly, appends a node holding its value and whatever
//! the adjoint needs, and returns a [`Var`]. Node indices are a topological
//! order, so [`Tape::backward`] is one reverse sweep.

use std::collections::HashMap;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::ops::conv::{self, Conv2dParams, ConvGeometry};
use crate::ops::elementwise::{self as ew, BinaryKind, UnaryKind};
use crate::ops::histogram;
use crate::ops::norm::{self, Moments};
use crate::ops::pool::{self, PoolKind};
use crate::ops::resample::{self, Resample};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Normalize {
        x: Var,
        moments: Vec<Moments<T>>,
        frozen: bool,
    },
    Pool {
        kind: PoolKind,
        x: Var,
        argmax: Option<Vec<usize>>,
    },
    SimpleGate {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Resample {
        kind: Resample,
        x: Var,
    },
    Sum {
        x: Var,
    },
    SoftHistogram {
        x: Var,
        bins: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Data-dependent global statistics (layer-norm moments, spatial means) seen during a pass.
#[derive(Debug, Clone)]
pub enum GlobalStat<T> {
    Moments(Vec<Moments<T>>),
    Pooled(Tensor<T>),
}

#[derive(Debug, Default)]
enum StatsMode<T> {
    #[default]
    Live,
    Record(Vec<GlobalStat<T>>),
    Replay {
        stats: Vec<GlobalStat<T>>,
        cursor: usize,
    },
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    stats: StatsMode<T>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
    bound: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.bound.get(&id).and_then(|v| self.grads.get(&v.0))
    }

    /// Accumulates parameter gradients into the store's `grad` slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut ids: Vec<_> = self.bound.keys().copied().collect();
        ids.sort();
        for id in ids {
            if let Some(g) = self.param(id) {
                store.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            stats: StatsMode::Live,
        }
    }

    /// A tape that records every global statistic it computes.
    pub fn recording() -> Self {
        Self {
            stats: StatsMode::Record(Vec::new()),
            ..Self::new()
        }
    }

    /// A tape that reuses previously recorded global statistics instead of
    /// recomputing them, in the same order. Used to isolate the spatially local
    /// part of a computation.
    pub fn replaying(stats: Vec<GlobalStat<T>>) -> Self {
        Self {
            stats: StatsMode::Replay { stats, cursor: 0 },
            ..Self::new()
        }
    }

    /// Recorded statistics; empty unless created with [`Tape::recording`].
    pub fn take_stats(&mut self) -> Vec<GlobalStat<T>> {
        match std::mem::take(&mut self.stats) {
            StatsMode::Record(s) => s,
            _ => Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        node_op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        value.ensure_finite(op)?;
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.nodes.push(Node {
            value,
            op: node_op,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a tensor; it participates in differentiation iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Binds a stored parameter; repeated binds of one id share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = store.get(id).clone();
        let v = self.leaf(t);
        self.bound.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        p: Conv2dParams,
    ) -> Result<Var> {
        let geom = ConvGeometry::resolve(
            self.shape(input),
            self.shape(kernel),
            bias.map(|b| self.shape(b)),
            p,
        )?;
        let out = conv::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        self.push(
            "conv2d",
            out,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        )
    }

    /// 3×3 depthwise convolution with same padding; `kernel` is `(m·C)×1×3×3`.
    pub fn depthwise_conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let c = self.shape(input).c;
        let k = self.shape(kernel);
        if k.h != 3 || k.w != 3 || k.c != 1 {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("kernel {k} is not (m·C)×1×3×3"),
            ));
        }
        self.conv2d(input, kernel, bias, Conv2dParams::dilated(1, c))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let out = ew::binary_forward(kind, self.value(a), self.value(b))?;
        self.push("binary", out, Op::Binary { kind, a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let out = ew::unary_forward(kind, self.value(x));
        self.push("unary", out, Op::Unary { kind, x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.unary(UnaryKind::SqrtEps(eps), x)
    }

    /// `scale * x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        self.unary(UnaryKind::Affine(scale, offset), x)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 1.0)
    }

    /// Zero-mean, unit-variance normalization over (C, H, W) of each batch item.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let replayed = match &mut self.stats {
            StatsMode::Replay { stats, cursor } => match stats.get(*cursor) {
                Some(GlobalStat::Moments(m)) if m.len() == self.nodes[x.0].value.shape().n => {
                    *cursor += 1;
                    Some(m.clone())
                }
                _ => return Err(Error::arg("normalize", "replayed statistics out of sync")),
            },
            _ => None,
        };
        let frozen = replayed.is_some();
        let moments = match replayed {
            Some(m) => m,
            None => norm::item_moments(self.value(x), eps)?,
        };
        if let StatsMode::Record(rec) = &mut self.stats {
            rec.push(GlobalStat::Moments(moments.clone()));
        }
        let out = norm::normalize_forward(self.value(x), &moments);
        self.push(
            "layer_norm",
            out,
            Op::Normalize { x, moments, frozen },
            &[x],
        )
    }

    /// Normalization followed by an optional per-channel (`1×C×1×1`) affine.
    pub fn layer_norm(
        &mut self,
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let mut y = self.normalize(x, eps)?;
        if let Some(s) = scale {
            y = self.mul(y, s)?;
        }
        if let Some(b) = shift {
            y = self.add(y, b)?;
        }
        Ok(y)
    }

    pub fn pool(&mut self, kind: PoolKind, x: Var) -> Result<Var> {
        if kind == PoolKind::ChannelAvg {
            if let StatsMode::Replay { stats, cursor } = &mut self.stats {
                let expect = Shape::new(
                    self.nodes[x.0].value.shape().n,
                    self.nodes[x.0].value.shape().c,
                    1,
                    1,
                );
                return match stats.get(*cursor) {
                    Some(GlobalStat::Pooled(t)) if t.shape() == expect => {
                        let t = t.clone();
                        *cursor += 1;
                        Ok(self.constant(t))
                    }
                    _ => Err(Error::arg("pool", "replayed statistics out of sync")),
                };
            }
        }
        let pooled = pool::pool_forward(kind, self.value(x));
        if kind == PoolKind::ChannelAvg {
            if let StatsMode::Record(rec) = &mut self.stats {
                rec.push(GlobalStat::Pooled(pooled.output.clone()));
            }
        }
        self.push(
            "pool",
            pooled.output,
            Op::Pool {
                kind,
                x,
                argmax: pooled.argmax,
            },
            &[x],
        )
    }

    pub fn simple_gate(&mut self, x: Var) -> Result<Var> {
        let out = ew::simple_gate_forward(self.value(x))?;
        self.push("simple_gate", out, Op::SimpleGate { x }, &[x])
    }

    /// Simplified channel attention: `x ⊙ Conv1×1(GAP_c(x))`.
    pub fn sca(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let c = self.shape(x).c;
        let w = self.shape(weight);
        if w != Shape::new(c, c, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "sca",
                lhs: self.shape(x),
                rhs: w,
            });
        }
        let pooled = self.pool(PoolKind::ChannelAvg, x)?;
        let scale = self.conv2d(pooled, weight, bias, Conv2dParams::same())?;
        self.mul(x, scale)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
            ew::concat_forward(&vals)?
        };
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        )
    }

    pub fn resample(&mut self, kind: Resample, x: Var) -> Result<Var> {
        let out = resample::resample_forward(kind, self.value(x))?;
        self.push("resample", out, Op::Resample { kind, x }, &[x])
    }

    pub fn interp2x_up(&mut self, x: Var) -> Result<Var> {
        self.resample(Resample::Up2x, x)
    }

    pub fn interp2x_down(&mut self, x: Var) -> Result<Var> {
        self.resample(Resample::Down2x, x)
    }

    /// Sum of all elements as a `1×1×1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::shape("mean", "zero-size tensor"));
        }
        let s = self.sum(x)?;
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    pub fn soft_histogram(&mut self, x: Var, bins: usize) -> Result<Var> {
        let out = histogram::soft_histogram_forward(self.value(x), bins)?;
        self.push("soft_histogram", out, Op::SoftHistogram { x, bins }, &[x])
    }

    /// Reverse sweep from a scalar `loss`. Clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let tracked = |v: Var| self.nodes[v.0].tracked;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    leaves.insert(i, g);
                }
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let need = (tracked(*input), tracked(*kernel), bias.is_some_and(tracked));
                    let cg = conv::conv2d_backward(val(*input), val(*kernel), &g, geom, need);
                    if let Some(gx) = cg.input {
                        add_into(&mut grads[input.0], gx);
                    }
                    if let Some(gk) = cg.kernel {
                        add_into(&mut grads[kernel.0], gk);
                    }
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Binary { kind, a, b } => {
                    let (ga, gb) = ew::binary_backward(
                        *kind,
                        val(*a),
                        val(*b),
                        &g,
                        (tracked(*a), tracked(*b)),
                    );
                    if let Some(ga) = ga {
                        add_into(&mut grads[a.0], ga);
                    }
                    if let Some(gb) = gb {
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Unary { kind, x } => {
                    let gx = ew::unary_backward(*kind, val(*x), &node.value, &g);
                    add_into(&mut grads[x.0], gx);
                }
                Op::Normalize { x, moments, frozen } => {
                    let gx = norm::normalize_backward(&node.value, moments, &g, *frozen);
                    add_into(&mut grads[x.0], gx);
                }
                Op::Pool { kind, x, argmax } => {
                    let gx = pool::pool_backward(*kind, val(*x).shape(), argmax.as_deref(), &g);
                    add_into(&mut grads[x.0], gx);
                }
                Op::SimpleGate { x } => {
                    let gx = ew::simple_gate_backward(val(*x), &g);
                    add_into(&mut grads[x.0], gx);
                }
                Op::Concat { parts } => {
                    let shapes: Vec<Shape> = parts.iter().map(|&p| val(p).shape()).collect();
                    for (p, gp) in parts.iter().zip(ew::concat_backward(&shapes, &g)) {
                        if tracked(*p) {
                            add_into(&mut grads[p.0], gp);
                        }
                    }
                }
                Op::Resample { kind, x } => {
                    let gx = resample::resample_backward(*kind, val(*x).shape(), &g);
                    add_into(&mut grads[x.0], gx);
                }
                Op::Sum { x } => {
                    let s = val(*x).shape();
                    add_into(&mut grads[x.0], Tensor::full(s, g.data()[0]));
                }
                Op::SoftHistogram { x, bins } => {
                    let gx = histogram::soft_histogram_backward(val(*x), *bins, &g);
                    add_into(&mut grads[x.0], gx);
                }
            }
        }

        let bound = std::mem::take(&mut self.bound);
        self.nodes.clear();
        Ok(Gradients {
            grads: leaves,
            bound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_of_squares_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let x0 = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| {
            (c as f64) - 0.3 * y as f64 + 0.1 * x as f64
        });
        let x = tape.variable(x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x).unwrap();
        for (gv, xv) in g.data().iter().zip(x0.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
        assert!(tape.is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::EmptyTape)));
        let x = tape.variable(Tensor::ones(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_values_surface_as_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::full(Shape::new(1, 1, 1, 1), 1e300));
        assert!(matches!(tape.mul(x, x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let b = tape.constant(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
        let p = tape.mul(a, b).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(b).is_none());
        assert!(g.wrt(a).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn param_grads_accumulate_into_store() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Tensor::full(Shape::new(1, 1, 1, 2), 2.0))
            .unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let w2 = tape.param(&store, id);
            assert_eq!(w, w2);
            let l = tape.sum(w).unwrap();
            tape.backward(l)
                .unwrap()
                .accumulate_into(&mut store)
                .unwrap();
        }
        assert_eq!(store.get(id).grad().unwrap(), &[2.0, 2.0]);
    }
}
