//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op applied to its [`Var`]s together with the
//! forward value. [`Tape::backward`] walks the records in strict reverse
//! insertion order and accumulates adjoints. Inputs of a recorded op are
//! always earlier records, so one reverse sweep is a valid topological order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::malleconv::slice::{slice_apply_backward, slice_apply_fused};
use crate::malleconv::KernelGrid;
use crate::ops::conv::conv2d_backward;
use crate::ops::pad::{crop_backward, reflect_pad_backward};
use crate::ops::pointwise::split_channels;
use crate::ops::pool::{avg_pool_backward, max_pool_backward, max_pool_with_argmax};
use crate::ops::resize::bilinear_resize_backward;
use crate::ops::shuffle::for_each_pair;
use crate::ops::{self, ConvSpec};
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Parameter gradients by name.
pub type ParamGrads = BTreeMap<String, Vec<f32>>;

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Sum(usize),
    Mean(usize),
    Conv { x: usize, w: usize, b: Option<usize>, spec: ConvSpec },
    AvgPool { x: usize, k: usize },
    MaxPool { x: usize, argmax: Vec<u32> },
    Resize(usize),
    SpaceToChannel { x: usize, r: usize },
    ChannelToSpace { x: usize, r: usize },
    Relu(usize),
    AddBias { x: usize, b: usize },
    Concat(usize, usize),
    SliceApply { x: usize, grid: usize, k: usize },
    ReflectPad(usize),
    Crop(usize),
    Mse { pred: usize, target: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// How the two operands of a binary elementwise op line up.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    ScalarLhs,
    ScalarRhs,
}

fn broadcast(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if a.is_scalar() {
        Ok(Broadcast::ScalarLhs)
    } else if b.is_scalar() {
        Ok(Broadcast::ScalarRhs)
    } else {
        Err(Error::ShapeMismatch { op, lhs: a, rhs: b })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f32, f32) -> f32) -> (Shape, Vec<f32>) {
    match mode {
        Broadcast::Same => (a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()),
        Broadcast::ScalarLhs => {
            let x = a.data()[0];
            (b.shape(), b.data().iter().map(|&y| f(x, y)).collect())
        }
        Broadcast::ScalarRhs => {
            let y = b.data()[0];
            (a.shape(), a.data().iter().map(|&x| f(x, y)).collect())
        }
    }
}

fn sum_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: fresh_id(), nodes: Vec::new(), params: Vec::new() }
    }

    /// Drops every record. Vars from before the reset are rejected afterwards.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.params.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::contract("variable does not belong to the current tape"));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Input | Op::Param => true,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, &[])
    }

    /// Records a differentiable leaf whose gradient can be read with [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[])
    }

    /// Records a named parameter. Its gradient is reported by name.
    pub fn param(&mut self, name: &str, t: Tensor) -> Result<Var> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        let v = self.push(t, Op::Param, &[]);
        self.params.push((name.to_string(), v.idx));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable does not belong to the current tape");
        &self.nodes[v.idx].value
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, rec: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let mode = broadcast(op, self.val(ia).shape(), self.val(ib).shape())?;
        let (shape, data) = zip_broadcast(self.val(ia), self.val(ib), mode, f);
        let t = Tensor::from_op(op, shape, data)?;
        Ok(self.push(t, rec(ia, ib), &[ia, ib]))
    }

    /// Elementwise `a + b`; either side may be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia).map("scale", |x| x * s)?;
        Ok(self.push(t, Op::Scale(ia, s), &[ia]))
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = sum_f64(self.val(ia).data()) as f32;
        let t = Tensor::from_op("sum", Shape::scalar(), vec![s])?;
        Ok(self.push(t, Op::Sum(ia), &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let m = (sum_f64(v.data()) / v.len() as f64) as f32;
        let t = Tensor::from_op("mean", Shape::scalar(), vec![m])?;
        Ok(self.push(t, Op::Mean(ia), &[ia]))
    }

    pub fn conv2d(&mut self, x: Var, spec: &ConvSpec, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let t = ops::conv2d(self.val(ix), spec, self.val(iw), ib.map(|i| self.val(i)))?;
        let inputs: Vec<usize> = [ix, iw].into_iter().chain(ib).collect();
        Ok(self.push(t, Op::Conv { x: ix, w: iw, b: ib, spec: *spec }, &inputs))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::avg_pool(self.val(ix), k)?;
        Ok(self.push(t, Op::AvgPool { x: ix, k }, &[ix]))
    }

    pub fn max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let (t, argmax) = max_pool_with_argmax(self.val(ix), k)?;
        Ok(self.push(t, Op::MaxPool { x: ix, argmax }, &[ix]))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::bilinear_resize(self.val(ix), out_h, out_w)?;
        Ok(self.push(t, Op::Resize(ix), &[ix]))
    }

    pub fn space_to_channel(&mut self, x: Var, r: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::space_to_channel(self.val(ix), r)?;
        Ok(self.push(t, Op::SpaceToChannel { x: ix, r }, &[ix]))
    }

    pub fn channel_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::channel_to_space(self.val(ix), r)?;
        Ok(self.push(t, Op::ChannelToSpace { x: ix, r }, &[ix]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::relu(self.val(ix))?;
        Ok(self.push(t, Op::Relu(ix), &[ix]))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(b)?);
        let t = ops::add_bias(self.val(ix), self.val(ib))?;
        Ok(self.push(t, Op::AddBias { x: ix, b: ib }, &[ix, ib]))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let t = ops::concat_channels(self.val(ia), self.val(ib))?;
        Ok(self.push(t, Op::Concat(ia, ib), &[ia, ib]))
    }

    /// Fused slice-and-apply of a packed kernel grid (see [`KernelGrid`]).
    pub fn slice_apply(&mut self, x: Var, grid: Var, k: usize) -> Result<Var> {
        let (ix, ig) = (self.idx(x)?, self.idx(grid)?);
        let g = KernelGrid::new(self.val(ig).clone(), k)?;
        let t = slice_apply_fused(self.val(ix), &g)?;
        Ok(self.push(t, Op::SliceApply { x: ix, grid: ig, k }, &[ix, ig]))
    }

    pub fn reflect_pad(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::reflect_pad(self.val(ix), out_h, out_w)?;
        Ok(self.push(t, Op::ReflectPad(ix), &[ix]))
    }

    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = ops::crop(self.val(ix), h, w)?;
        Ok(self.push(t, Op::Crop(ix), &[ix]))
    }

    /// Mean squared error over all elements, accumulated in `f64`.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (self.val(ip), self.val(it));
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch { op: "mse_loss", lhs: p.shape(), rhs: t.shape() });
        }
        let sse: f64 = p.data().iter().zip(t.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        let v = Tensor::from_op("mse_loss", Shape::scalar(), vec![(sse / p.len() as f64) as f32])?;
        Ok(self.push(v, Op::Mse { pred: ip, target: it }, &[ip, it]))
    }

    /// Gradients of the scalar `loss` with respect to every recorded input and parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if !self.val(il).shape().is_scalar() {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {}", self.val(il).shape())));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(name, i)| {
                let g = grads[*i].clone().unwrap_or_else(|| vec![0.0; self.val(*i).len()]);
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { tape: self.id, shapes: self.nodes.iter().map(|n| n.value.shape()).collect(), grads, params })
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let mut acc = |j: usize, delta: Vec<f32>| {
            if !self.nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(slot) => {
                    for (s, d) in slot.iter_mut().zip(&delta) {
                        *s += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, reduce_to(self.val(*a).shape(), g, |v| v));
                acc(*b, reduce_to(self.val(*b).shape(), g, |v| sign * v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                acc(*a, reduce_to(va.shape(), &times(g, vb), |v| v));
                acc(*b, reduce_to(vb.shape(), &times(g, va), |v| v));
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::Sum(a) => acc(*a, vec![g[0]; self.val(*a).len()]),
            Op::Mean(a) => {
                let n = self.val(*a).len();
                acc(*a, vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::Conv { x, w, b, spec } => {
                let need_x = self.nodes[*x].needs_grad;
                let cg = conv2d_backward(self.val(*x), spec, self.val(*w), g, need_x);
                if need_x {
                    acc(*x, cg.x);
                }
                acc(*w, cg.w);
                if let Some(b) = b {
                    acc(*b, cg.b);
                }
            }
            Op::AvgPool { x, k } => acc(*x, avg_pool_backward(self.val(*x).shape(), *k, g)),
            Op::MaxPool { x, argmax } => acc(*x, max_pool_backward(self.val(*x).len(), argmax, g)),
            Op::Resize(x) => {
                let os = node.value.shape();
                acc(*x, bilinear_resize_backward(self.val(*x).shape(), os.h, os.w, g));
            }
            Op::SpaceToChannel { x, r } => {
                let mut gx = vec![0.0; g.len()];
                for_each_pair(self.val(*x).shape(), node.value.shape(), *r, |s, c| gx[s] = g[c]);
                acc(*x, gx);
            }
            Op::ChannelToSpace { x, r } => {
                let mut gx = vec![0.0; g.len()];
                for_each_pair(node.value.shape(), self.val(*x).shape(), *r, |s, c| gx[c] = g[s]);
                acc(*x, gx);
            }
            Op::Relu(x) => {
                let gx = g.iter().zip(self.val(*x).data()).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                acc(*x, gx);
            }
            Op::AddBias { x, b } => {
                let c = node.value.shape().c;
                let mut gb = vec![0.0f64; c];
                for px in g.chunks_exact(c) {
                    for (s, v) in gb.iter_mut().zip(px) {
                        *s += *v as f64;
                    }
                }
                acc(*x, g.to_vec());
                acc(*b, gb.into_iter().map(|v| v as f32).collect());
            }
            Op::Concat(a, b) => {
                let (ga, gb) = split_channels(g, self.val(*a).shape().c, self.val(*b).shape().c);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::SliceApply { x, grid, k } => {
                let kg = KernelGrid::new(self.val(*grid).clone(), *k).expect("checked in forward");
                let sg = slice_apply_backward(self.val(*x), &kg, g);
                acc(*x, sg.x);
                acc(*grid, sg.grid);
            }
            Op::ReflectPad(x) => {
                let os = node.value.shape();
                acc(*x, reflect_pad_backward(self.val(*x).shape(), os.h, os.w, g));
            }
            Op::Crop(x) => {
                let os = node.value.shape();
                acc(*x, crop_backward(self.val(*x).shape(), os.h, os.w, g));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.val(*pred), self.val(*target));
                let scale = 2.0 * g[0] as f64 / p.len() as f64;
                let d: Vec<f32> = p.data().iter().zip(t.data()).map(|(&a, &b)| ((a as f64 - b as f64) * scale) as f32).collect();
                acc(*target, d.iter().map(|v| -v).collect());
                acc(*pred, d);
            }
        }
    }
}

/// `g ⊙ t`, with a single-element `t` broadcast.
fn times(g: &[f32], t: &Tensor) -> Vec<f32> {
    match t.data() {
        [v] => g.iter().map(|x| x * v).collect(),
        d => g.iter().zip(d).map(|(x, y)| x * y).collect(),
    }
}

/// Sums a full-size gradient down to a scalar operand, or maps it elementwise.
fn reduce_to(shape: Shape, g: &[f32], f: impl Fn(f32) -> f32) -> Vec<f32> {
    if shape.numel() == g.len() {
        g.iter().map(|&v| f(v)).collect()
    } else {
        vec![f(sum_f64(g) as f32)]
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Shape>,
    grads: Vec<Option<Vec<f32>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.idx >= self.shapes.len() {
            return Err(Error::contract("variable does not belong to the differentiated tape"));
        }
        let shape = self.shapes[v.idx];
        match &self.grads[v.idx] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }

    /// Raw gradient of a named parameter. May contain non-finite values.
    pub fn param(&self, name: &str) -> Option<&[f32]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f32]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn add_values() {
        let mut tape = Tape::new();
        let a = tape.constant(t(Shape::new(1, 1, 1, 2), &[1.0, 2.0]));
        let b = tape.constant(t(Shape::new(1, 1, 1, 2), &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
        let z = tape.constant(Tensor::zeros(Shape::new(1, 1, 1, 2)));
        let d = tape.add(a, z).unwrap();
        assert_eq!(tape.value(d), tape.value(a));
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let a = tape.input(t(Shape::new(1, 1, 1, 3), &[1.0, 2.0, 3.0]));
        let s = tape.sum(a).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 6.0);
        let k = tape.constant(Tensor::full(Shape::new(2, 3, 3, 2), 1.75));
        let m = tape.mean(k).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 1.75);

        let x = tape.input(Tensor::ones(Shape::new(1, 2, 2, 1)));
        let m = tape.mean(x).unwrap();
        let g = tape.backward(m).unwrap().wrt(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn param_gradients() {
        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::zeros(Shape::new(1, 2, 2, 1))).unwrap();
        let q = tape.param("unused", Tensor::ones(Shape::new(1, 1, 1, 3))).unwrap();
        let _ = q;
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param("p").unwrap(), &[1.0; 4]);
        assert_eq!(g.param("unused").unwrap(), &[0.0; 3]);

        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::scalar(3.0)).unwrap();
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq).unwrap();
        assert_eq!(tape.backward(s).unwrap().param("p").unwrap(), &[6.0]);
    }

    #[test]
    fn scalar_broadcast() {
        let mut tape = Tape::new();
        let a = tape.input(t(Shape::new(1, 1, 2, 1), &[1.0, 2.0]));
        let s = tape.input(Tensor::scalar(3.0));
        let m = tape.mul(s, a).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 6.0]);
        let l = tape.sum(m).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(s).unwrap().data(), &[3.0]);
        assert_eq!(g.wrt(a).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn contract_errors() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::ones(Shape::new(1, 1, 1, 2)));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
        let b = tape.input(Tensor::ones(Shape::new(1, 1, 1, 3)));
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(tape.param("p", Tensor::scalar(1.0)).is_ok());
        assert!(matches!(tape.param("p", Tensor::scalar(1.0)), Err(Error::Contract(_))));

        tape.reset();
        assert!(tape.is_empty());
        assert!(matches!(tape.sum(a), Err(Error::Contract(_))));
        let c = tape.input(Tensor::scalar(2.0));
        let s = tape.sum(c).unwrap();
        assert_eq!(tape.backward(s).unwrap().wrt(c).unwrap().data(), &[1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::ones(Shape::new(1, 1, 1, 2)));
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(c).unwrap().data(), &[0.0, 0.0]);
    }
}
