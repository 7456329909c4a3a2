//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already a topological order and `backward` is a single reverse sweep.

use std::sync::Arc;

use super::{gemm, MatRef, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        cols: Vec<T>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Reshape(Var),
    Slice {
        input: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        probs: Var,
        label: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
        pos_weight: T,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation graph over tensors of element type `T`.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf that receives gradients.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A trainable leaf sharing storage with a parameter tensor.
    pub fn param(&mut self, t: &Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-trainable leaf sharing storage with a parameter tensor.
    pub fn frozen(&mut self, t: &Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Takes the gradient buffer out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// 3x3 same-padded cross-correlation. `input` is `[C_in,H,W]`, `kernel`
    /// is `[C_out,C_in,3,3]`, optional `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim(format!("conv2d input must be [C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != xs[0] {
            return Err(Error::dim(format!(
                "conv2d kernel {ks:?} incompatible with input {xs:?}"
            )));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let cout = ks[0];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim(format!(
                    "conv2d bias {:?} != [{cout}]",
                    self.shape(b)
                )));
            }
        }
        let hw = h * w;
        let x = self.value(input).data();
        let mut cols = vec![T::zero(); cin * 9 * hw];
        for c in 0..cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let dst = &mut row[y * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src[..w - 1]),
                            1 => dst.copy_from_slice(src),
                            _ => dst[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); cout * hw];
        gemm(
            MatRef::new(self.value(kernel).data(), cout, cin * 9),
            MatRef::new(&cols, cin * 9, hw),
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (co, chunk) in out.chunks_mut(hw).enumerate() {
                let bb = bv[co];
                chunk.iter_mut().for_each(|v| *v = *v + bb);
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![cout, h, w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(Error::dim(format!(
                "maxpool2x2 needs [C,H>=2,W>=2], got {xs:?}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        // strict comparison: ties keep the earliest row-major index
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            Op::MaxPool { input, argmax },
            rg,
        ))
    }

    /// Affine layer. `input` is `[n]` or `[batch,n]`, `weight` is `[m,n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 {
            return Err(Error::dim(format!("dense weight must be [m,n], got {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let (batch, out_shape) = match xs.as_slice() {
            [k] if *k == n => (1, vec![m]),
            [b, k] if *k == n => (*b, vec![*b, m]),
            _ => {
                return Err(Error::dim(format!(
                    "dense input {xs:?} incompatible with weight {ws:?}"
                )))
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::dim(format!("dense bias {:?} != [{m}]", self.shape(b))));
            }
        }
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let mut out = vec![T::zero(); batch * m];
        if batch == 1 {
            for (o, row) in out.iter_mut().zip(wt.chunks_exact(n)) {
                *o = row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            }
        } else {
            gemm(
                MatRef::new(x, batch, n),
                MatRef::t(wt, m, n),
                &mut out,
                false,
            );
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o = *o + bb);
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    fn unary(&mut self, input: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let src = self.value(input);
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(input);
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(input, sigmoid, Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |v| v.tanh(), Op::Tanh(input))
    }

    /// Softmax over a rank-1 tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 1 || x.is_empty() {
            return Err(Error::dim(format!("softmax needs a non-empty vector, got {:?}", x.shape())));
        }
        let probs = softmax_vec(x.data());
        let rg = self.rg(input);
        Ok(self.push(Tensor::from_vec(probs), Op::Softmax(input), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let out = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let out = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(t, Op::Reshape(input), rg))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    /// Contiguous range `[start, start+len)` of the flattened input, as a vector.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        if start + len > x.len() {
            return Err(Error::dim(format!(
                "slice {start}..{} out of range for {} elements",
                start + len,
                x.len()
            )));
        }
        let t = Tensor::from_vec(x.data()[start..start + len].to_vec());
        let rg = self.rg(input);
        Ok(self.push(t, Op::Slice { input, start }, rg))
    }

    /// Row `row` of a rank-2 tensor.
    pub fn row(&mut self, input: Var, row: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || row >= s[0] {
            return Err(Error::dim(format!("row {row} of shape {s:?}")));
        }
        self.slice(input, row * s[1], s[1])
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let mut out = Vec::new();
        for &v in inputs {
            out.extend_from_slice(self.value(v).data());
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::from_vec(out), Op::Concat(inputs.to_vec()), rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: T = self.value(input).data().iter().copied().sum();
        let rg = self.rg(input);
        Ok(self.push(Tensor::scalar(s), Op::Sum(input), rg))
    }

    /// Fused softmax + cross-entropy on raw logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.rank() != 1 {
            return Err(Error::dim(format!("logits must be a vector, got {:?}", x.shape())));
        }
        if label >= x.len() {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", x.len())));
        }
        let max = x.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + x.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - x.data()[label];
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        let probs = softmax_vec(x.data());
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    /// `-ln(probs[label])` on already-normalized probabilities.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.value(probs);
        if p.rank() != 1 {
            return Err(Error::dim(format!("probs must be a vector, got {:?}", p.shape())));
        }
        if label >= p.len() {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", p.len())));
        }
        let loss = -p.data()[label].ln();
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross-entropy of zero probability".into()));
        }
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, label }, rg))
    }

    /// Mean binary cross-entropy on logits; positives are weighted by `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], pos_weight: T) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::dim(format!(
                "bce: {} logits vs {} targets",
                z.len(),
                targets.len()
            )));
        }
        let n = T::of(z.len() as f64);
        let mut total = T::zero();
        for (&zi, &yi) in z.data().iter().zip(targets) {
            total = total + yi * pos_weight * softplus(-zi) + (T::one() - yi) * softplus(zi);
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("binary cross-entropy loss".into()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
            rg,
        ))
    }

    /// Backpropagates from the scalar `target`; gradients are retrievable via [`Graph::grad`].
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::dim(format!(
                "backward target must be scalar, got {:?}",
                self.shape(target)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[target.0] = Some(vec![T::one()]);
        for idx in (0..=target.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
            } => {
                let xs = self.shape(*input);
                let (cin, h, w) = (xs[0], xs[1], xs[2]);
                let hw = h * w;
                let cout = self.shape(*kernel)[0];
                if self.rg(*kernel) {
                    accumulate(&mut grads[kernel.0], cout * cin * 9, |dk| {
                        gemm(
                            MatRef::new(g, cout, hw),
                            MatRef::t(cols, cin * 9, hw),
                            dk,
                            true,
                        )
                    });
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    accumulate(&mut grads[b.0], cout, |db| {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d = *d + g[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
                        }
                    });
                }
                if self.rg(*input) {
                    let mut dcols = vec![T::zero(); cin * 9 * hw];
                    gemm(
                        MatRef::t(self.value(*kernel).data(), cout, cin * 9),
                        MatRef::new(g, cout, hw),
                        &mut dcols,
                        false,
                    );
                    accumulate(&mut grads[input.0], cin * hw, |dx| {
                        for c in 0..cin {
                            let plane = &mut dx[c * hw..(c + 1) * hw];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let row = &dcols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                                    for y in 0..h {
                                        let sy = y as isize + ky as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        let dst = &mut plane[sy as usize * w..][..w];
                                        let src = &row[y * w..][..w];
                                        let (d, s) = match kx {
                                            0 => (&mut dst[..w - 1], &src[1..]),
                                            1 => (&mut dst[..], &src[..]),
                                            _ => (&mut dst[1..], &src[..w - 1]),
                                        };
                                        d.iter_mut().zip(s).for_each(|(a, &b)| *a = *a + b);
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxPool { input, argmax } => {
                let n = self.value(*input).len();
                accumulate(&mut grads[input.0], n, |dx| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] = dx[src] + gv;
                    }
                });
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let ws = self.shape(*weight);
                let (m, n) = (ws[0], ws[1]);
                let batch = g.len() / m;
                let x = self.value(*input).data();
                if self.rg(*weight) {
                    accumulate(&mut grads[weight.0], m * n, |dw| {
                        if batch == 1 {
                            for (row, &gj) in dw.chunks_exact_mut(n).zip(g) {
                                row.iter_mut().zip(x).for_each(|(d, &xv)| *d = *d + gj * xv);
                            }
                        } else {
                            gemm(MatRef::t(g, batch, m), MatRef::new(x, batch, n), dw, true);
                        }
                    });
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    accumulate(&mut grads[b.0], m, |db| {
                        for row in g.chunks_exact(m) {
                            db.iter_mut().zip(row).for_each(|(d, &gv)| *d = *d + gv);
                        }
                    });
                }
                if self.rg(*input) {
                    let wt = self.value(*weight).data();
                    accumulate(&mut grads[input.0], batch * n, |dx| {
                        if batch == 1 {
                            for (row, &gj) in wt.chunks_exact(n).zip(g) {
                                dx.iter_mut().zip(row).for_each(|(d, &wv)| *d = *d + gj * wv);
                            }
                        } else {
                            gemm(MatRef::new(g, batch, m), MatRef::new(wt, m, n), dx, true);
                        }
                    });
                }
            }
            Op::Relu(input) => {
                accumulate(&mut grads[input.0], g.len(), |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Sigmoid(input) => {
                accumulate(&mut grads[input.0], g.len(), |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(out) {
                        *d = *d + gv * y * (T::one() - y);
                    }
                });
            }
            Op::Tanh(input) => {
                accumulate(&mut grads[input.0], g.len(), |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(out) {
                        *d = *d + gv * (T::one() - y * y);
                    }
                });
            }
            Op::Softmax(input) => {
                let dot: T = g.iter().zip(out).map(|(&a, &b)| a * b).sum();
                accumulate(&mut grads[input.0], g.len(), |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(out) {
                        *d = *d + y * (gv - dot);
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        accumulate(&mut grads[v.0], g.len(), |dx| {
                            dx.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.rg(*v) {
                        let o = self.value(*other).data();
                        accumulate(&mut grads[v.0], g.len(), |dx| {
                            for ((d, &gv), &ov) in dx.iter_mut().zip(g).zip(o) {
                                *d = *d + gv * ov;
                            }
                        });
                    }
                }
            }
            Op::Reshape(input) => {
                accumulate(&mut grads[input.0], g.len(), |dx| {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv)
                });
            }
            Op::Slice { input, start } => {
                let n = self.value(*input).len();
                accumulate(&mut grads[input.0], n, |dx| {
                    dx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gv)| *d = *d + gv)
                });
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for v in inputs {
                    let n = self.value(*v).len();
                    if self.rg(*v) {
                        let part = &g[offset..offset + n];
                        accumulate(&mut grads[v.0], n, |dx| {
                            dx.iter_mut().zip(part).for_each(|(d, &gv)| *d = *d + gv)
                        });
                    }
                    offset += n;
                }
            }
            Op::Sum(input) => {
                let n = self.value(*input).len();
                let gv = g[0];
                accumulate(&mut grads[input.0], n, |dx| {
                    dx.iter_mut().for_each(|d| *d = *d + gv)
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gv = g[0];
                accumulate(&mut grads[logits.0], probs.len(), |dx| {
                    for (i, (d, &p)) in dx.iter_mut().zip(probs).enumerate() {
                        let t = if i == *label { T::one() } else { T::zero() };
                        *d = *d + gv * (p - t);
                    }
                });
            }
            Op::CrossEntropy { probs, label } => {
                let p = self.value(*probs).data();
                let n = p.len();
                let gv = g[0];
                accumulate(&mut grads[probs.0], n, |dx| {
                    dx[*label] = dx[*label] - gv / p[*label];
                });
            }
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            } => {
                let z = self.value(*logits).data();
                let scale = g[0] / T::of(z.len() as f64);
                accumulate(&mut grads[logits.0], z.len(), |dx| {
                    for ((d, &zi), &yi) in dx.iter_mut().zip(z).zip(targets) {
                        let s = sigmoid(zi);
                        // d/dz of y*w*softplus(-z) + (1-y)*softplus(z)
                        let dz = (T::one() - yi) * s - yi * *pos_weight * (T::one() - s);
                        *d = *d + scale * dz;
                    }
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_vec<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation with zero padding 1.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>) -> Vec<f64> {
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cout = k.shape()[0];
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + sy as usize) * w + sx as usize]
                                    * k.data()[((co * cin + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = g.constant(rand_tensor(&[1, 1, 3, 3], &mut rng));
        let y = g.conv2d(x, k, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xt = rand_tensor(&[1, 5, 4], &mut rng);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let mut g = Graph::<f64>::new();
        let x = g.constant(xt.clone());
        let k = g.constant(Tensor::new(vec![1, 1, 3, 3], kd).unwrap());
        let y = g.conv2d(x, k, None).unwrap();
        assert_eq!(g.value(y).data(), xt.data());
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(cin, cout, h, w) in &[(1, 2, 4, 4), (3, 2, 5, 7), (4, 4, 8, 8), (2, 3, 1, 6)] {
            let xt = rand_tensor(&[cin, h, w], &mut rng);
            let kt = rand_tensor(&[cout, cin, 3, 3], &mut rng);
            let mut g = Graph::<f64>::new();
            let x = g.constant(xt.clone());
            let k = g.constant(kt.clone());
            let y = g.conv2d(x, k, None).unwrap();
            for (a, b) in g.value(y).data().iter().zip(naive_conv(&xt, &kt)) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(g.conv2d(x, k, None), Err(Error::Dimension(_))));
        let k5 = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(g.conv2d(x, k5, None).is_err());
    }

    #[test]
    fn maxpool_cases() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::filled(&[2, 4, 6], 3.5));
        let p = g.maxpool2x2(c).unwrap();
        assert_eq!(g.shape(p), &[2, 2, 3]);
        assert!(g.value(p).data().iter().all(|&v| v == 3.5));

        let w = g.constant(Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = g.maxpool2x2(w).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);

        let one_row = g.constant(Tensor::zeros(&[1, 1, 4]));
        assert!(g.maxpool2x2(one_row).is_err());
    }

    #[test]
    fn maxpool_matches_window_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(h, w) in &[(6, 6), (7, 5), (2, 9)] {
            let xt = rand_tensor(&[1, h, w], &mut rng);
            let mut g = Graph::<f64>::new();
            let x = g.constant(xt.clone());
            let p = g.maxpool2x2(x).unwrap();
            let mut expect = Vec::new();
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let window = [
                        xt.data()[2 * oy * w + 2 * ox],
                        xt.data()[2 * oy * w + 2 * ox + 1],
                        xt.data()[(2 * oy + 1) * w + 2 * ox],
                        xt.data()[(2 * oy + 1) * w + 2 * ox + 1],
                    ];
                    expect.push(window.iter().copied().fold(f64::MIN, f64::max));
                }
            }
            assert_eq!(g.value(p).data(), expect.as_slice());
        }
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(&[1, 2, 2], 1.0));
        let p = g.maxpool2x2(x).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let eye = g.constant(
            Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let zb = g.constant(Tensor::zeros(&[3]));
        let y = g.dense(x, eye, Some(zb)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let zw = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::from_f64(&[2], &[0.25, -4.0]).unwrap());
        let y = g.dense(x, zw, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, -4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wt = rand_tensor(&[3, 2], &mut rng);
        let xt = rand_tensor(&[2], &mut rng);
        let bt = rand_tensor(&[3], &mut rng);
        let (w, xv, bv) = (g.constant(wt.clone()), g.constant(xt.clone()), g.constant(bt.clone()));
        let y = g.dense(xv, w, Some(bv)).unwrap();
        for j in 0..3 {
            let want = wt.data()[j * 2] * xt.data()[0] + wt.data()[j * 2 + 1] * xt.data()[1] + bt.data()[j];
            assert!((g.value(y).data()[j] - want).abs() < 1e-12);
        }
        let bad = g.constant(Tensor::zeros(&[4]));
        assert!(g.dense(bad, w, None).is_err());
    }

    #[test]
    fn batched_dense_equals_rowwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xt = rand_tensor(&[5, 4], &mut rng);
        let wt = rand_tensor(&[3, 4], &mut rng);
        let mut g = Graph::<f64>::new();
        let (x, w) = (g.constant(xt), g.constant(wt));
        let y = g.dense(x, w, None).unwrap();
        for r in 0..5 {
            let xr = g.row(x, r).unwrap();
            let yr = g.dense(xr, w, None).unwrap();
            for j in 0..3 {
                assert!((g.value(y).data()[r * 3 + j] - g.value(yr).data()[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activations() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[-5.0, 5.0]).unwrap());
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 5.0]);
        let s = g.sigmoid(x).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));

        let u = g.constant(Tensor::filled(&[4], 0.7));
        let sm = g.softmax(u).unwrap();
        assert!(g.value(sm).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let a = g.constant(Tensor::from_f64(&[2], &[0.0, 3f64.ln()]).unwrap());
        let sm = g.softmax(a).unwrap();
        assert!((g.value(sm).data()[0] - 0.25).abs() < 1e-12);
        assert!((g.value(sm).data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_f64(&[3], &[0.0, 1.0, 0.0]).unwrap());
        let l = g.cross_entropy(p, 1).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        let u = g.constant(Tensor::filled(&[4], 0.25));
        let l = g.cross_entropy(u, 2).unwrap();
        assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        let z = g.constant(Tensor::zeros(&[4]));
        let l = g.softmax_cross_entropy(z, 3).unwrap();
        assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(g.softmax_cross_entropy(z, 4), Err(Error::InvalidArgument(_))));
        assert!(g.cross_entropy(u, 9).is_err());
    }

    #[test]
    fn bce_equal_weights_matches_formula() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap());
        let l = g.bce_with_logits(z, &[1.0, 0.0, 1.0], 1.0).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let want = -((s(0.3)).ln() + (1.0 - s(-1.2)).ln() + s(2.0).ln()) / 3.0;
        assert!((g.value(l).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }
}
