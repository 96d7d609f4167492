//! Tape-based reverse-mode differentiation.
//!
//! Every forward call appends a node holding its output value and the
//! information needed to run its backward rule. Nodes are only ever
//! appended, so the node order is a topological order and backward is a
//! single reverse sweep.

use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::pool::{self, PoolGeom};
use crate::ops::{norm, upsample, window_out};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Pow { x: Var, q: u32 },
    Act { x: Var, kind: Activation },
    Softmax { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, geom: PoolGeom },
    Upsample { x: Var, factor: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    /// Affine transform with frozen statistics (eval-mode batch norm).
    ChannelAffine { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T> },
    Concat { parts: Vec<Var> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Sum { x: Var },
    WeightedCe { probs: Var, labels: Vec<usize>, weights: Vec<T> },
    Dice { pred: Var, target: Vec<T>, eps: T },
    Jaccard { pred: Var, target: Vec<T>, eps: T },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } | Op::ChannelAffine { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Concat { parts } => parts.clone(),
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Pow { x, .. }
            | Op::Act { x, .. }
            | Op::Softmax { x }
            | Op::MaxPool { x, .. }
            | Op::AvgPool { x, .. }
            | Op::Upsample { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Sum { x } => vec![*x],
            Op::WeightedCe { probs: x, .. } | Op::Dice { pred: x, .. } | Op::Jaccard { pred: x, .. } => {
                vec![*x]
            }
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation. Rebuilt for every forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar w.r.t. every node that needed one.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Input leaf that receives a gradient (used by gradient checks).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        self.value(v).dims4().map_err(|_| shape_err(op, format!("expected NCHW input, got {:?}", self.shape(v))))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.dims4(x, "conv2d")?;
        let (cout, wcin, kh, kw) = self.dims4(w, "conv2d")?;
        if wcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels (shape {:?}) but weight expects {wcin} (shape {:?})", self.shape(x), self.shape(w)),
            ));
        }
        if kh != kw {
            return Err(shape_err("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be >= 1"));
        }
        if kh > h + 2 * padding || kh > wd + 2 * padding {
            return Err(shape_err("conv2d", format!("kernel {kh} exceeds padded input {h}x{wd} (pad {padding})")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad: padding,
            ho: window_out(h, kh, stride, padding),
            wo: window_out(wd, kh, stride, padding),
        };
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let value = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    pub fn pow(&mut self, x: Var, q: u32) -> Result<Var> {
        if q == 0 {
            return Err(invalid("pow", "exponent must be >= 1"));
        }
        let value = self.value(x).map(|v| v.powi(q as i32));
        Ok(self.push(value, Op::Pow { x, q }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() }),
            Activation::Sigmoid => self.value(x).map(stable_sigmoid),
            Activation::Tanh => self.value(x).map(|v| v.tanh()),
        };
        self.push(value, Op::Act { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// Softmax across the channel axis of an NCHW tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "softmax_channels")?;
        if c < 2 {
            return Err(invalid("softmax_channels", format!("need at least 2 channels, got {c}")));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut mx = T::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(src[base + ch * hw + p]);
                }
                let mut s = T::zero();
                for ch in 0..c {
                    let e = (src[base + ch * hw + p] - mx).exp();
                    out[base + ch * hw + p] = e;
                    s += e;
                }
                for ch in 0..c {
                    out[base + ch * hw + p] /= s;
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::Softmax { x }))
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        match kind {
            PoolKind::Max => self.max_pool2d(x, k, stride, 0),
            PoolKind::Avg => self.avg_pool2d(x, k, stride),
        }
    }

    fn pool_geom(&self, x: Var, k: usize, stride: usize, pad: usize, op: &'static str) -> Result<(usize, usize, PoolGeom)> {
        let (n, c, h, w) = self.dims4(x, op)?;
        if k == 0 || stride == 0 {
            return Err(invalid(op, "window and stride must be >= 1"));
        }
        if pad > k / 2 {
            return Err(invalid(op, format!("padding {pad} too large for window {k}")));
        }
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(shape_err(op, format!("window {k} exceeds input {h}x{w}")));
        }
        let geom = PoolGeom {
            planes: n * c,
            h,
            w,
            k,
            stride,
            pad,
            ho: window_out(h, k, stride, pad),
            wo: window_out(w, k, stride, pad),
        };
        Ok((n, c, geom))
    }

    /// Max pooling; `padding` positions never win the maximum.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, geom) = self.pool_geom(x, k, stride, padding, "max_pool2d")?;
        let (out, argmax) = pool::max_forward(&geom, self.value(x).data());
        let value = Tensor::new(&[n, c, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, geom) = self.pool_geom(x, k, stride, 0, "avg_pool2d")?;
        let out = pool::avg_forward(&geom, self.value(x).data());
        let value = Tensor::new(&[n, c, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::AvgPool { x, geom }))
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "upsample_bilinear")?;
        if factor < 2 {
            return Err(invalid("upsample_bilinear", format!("factor must be >= 2, got {factor}")));
        }
        let out = upsample::forward(n * c, h, w, factor, self.value(x).data());
        let value = Tensor::new(&[n, c, h * factor, w * factor], out)?;
        Ok(self.push(value, Op::Upsample { x, factor }))
    }

    fn check_channel_params(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = self.dims4(x, "batch_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batch_norm",
                format!("scale {:?} / shift {:?} for {c} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok((n, c, h * w))
    }

    /// Train-mode batch normalization. Returns the output together with the
    /// batch mean and biased variance per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let dims = self.check_channel_params(x, gamma, beta)?;
        if dims.0 * dims.2 < 2 {
            return Err(invalid("batch_norm", "train mode needs at least 2 values per channel"));
        }
        let f = norm::train_forward(dims, self.value(x).data(), self.value(gamma).data(), self.value(beta).data(), eps);
        let value = Tensor::new(self.shape(x), f.out)?;
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, xhat: f.xhat, inv_std: f.inv_std });
        Ok((v, f.mean, f.var))
    }

    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (n, c, hw) = self.check_channel_params(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm", "running statistics do not match channel count"));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    out[i] = g[ch] * (src[i] - mean[ch]) * inv_std[ch] + bt[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta, mean: mean.to_vec(), inv_std }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat", "nothing to concatenate"))?;
        let (n, _, h, w) = self.dims4(first, "concat")?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.dims4(p, "concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(p), self.shape(first))));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(&[n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).numel() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// `-(1/P) * sum_p w[t_p] * ln(probs[t_p] + 1e-12)` over all pixels `p`.
    pub(crate) fn weighted_ce(&mut self, probs: Var, labels: Vec<usize>, weights: Vec<T>) -> Result<Var> {
        let (n, c, h, w) = self.dims4(probs, "weighted_cross_entropy")?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(shape_err("weighted_cross_entropy", format!("{} labels for {} pixels", labels.len(), n * hw)));
        }
        if weights.len() != c {
            return Err(shape_err("weighted_cross_entropy", format!("{} weights for {c} classes", weights.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(invalid("weighted_cross_entropy", format!("label {bad} out of range for {c} classes")));
        }
        let p = self.value(probs).data();
        let floor = T::lit(CE_FLOOR);
        let mut acc = T::zero();
        for (i, &t) in labels.iter().enumerate() {
            let (b, px) = (i / hw, i % hw);
            acc += weights[t] * (p[(b * c + t) * hw + px] + floor).ln();
        }
        let loss = -acc / T::lit((n * hw) as f64);
        Ok(self.push(Tensor::scalar(loss), Op::WeightedCe { probs, labels, weights }))
    }

    pub(crate) fn dice(&mut self, pred: Var, target: Vec<T>, eps: T) -> Result<Var> {
        if target.len() != self.value(pred).numel() {
            return Err(shape_err("dice_loss", "prediction and target sizes differ"));
        }
        let s = overlap_sums(self.value(pred).data(), &target);
        let loss = T::one() - (T::lit(2.0) * s.inter + eps) / (s.pred + s.target + eps);
        Ok(self.push(Tensor::scalar(loss), Op::Dice { pred, target, eps }))
    }

    pub(crate) fn jaccard(&mut self, pred: Var, target: Vec<T>, eps: T) -> Result<Var> {
        if target.len() != self.value(pred).numel() {
            return Err(shape_err("jaccard_loss", "prediction and target sizes differ"));
        }
        let s = overlap_sums(self.value(pred).data(), &target);
        let union = s.pred + s.target - s.inter;
        let loss = T::one() - (s.inter + eps) / (union + eps);
        Ok(self.push(Tensor::scalar(loss), Op::Jaccard { pred, target, eps }))
    }

    /// Gradients of the scalar `loss` w.r.t. every node that needs one.
    pub fn grads(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !root.needs_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            for (input, g) in self.backward_rule(idx, &dy)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(g),
                }
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    /// Run backward and add parameter gradients into `store`. Calling this
    /// twice without [`ParamStore::zero_grad`] accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.grads(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(grads)
    }

    fn backward_rule(&self, idx: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let d = dy.data();
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v), data);
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.nodes[x.0].needs_grad, self.nodes[w.0].needs_grad, b.is_some_and(|b| self.nodes[b.0].needs_grad));
                let g = conv::backward(geom, self.value(*x).data(), self.value(*w).data(), d, need);
                if let Some(dx) = g.dx {
                    res.push((*x, like(*x, dx)?));
                }
                if let Some(dw) = g.dw {
                    res.push((*w, like(*w, dw)?));
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    res.push((*b, like(*b, db)?));
                }
            }
            Op::Pow { x, q } => {
                let qf = T::lit(*q as f64);
                let xs = self.value(*x).data();
                let g = xs.iter().zip(d).map(|(&v, &g)| g * qf * v.powi(*q as i32 - 1)).collect();
                res.push((*x, like(*x, g)?));
            }
            Op::Act { x, kind } => {
                let ys = out.data();
                let g = match kind {
                    Activation::Relu => ys.iter().zip(d).map(|(&y, &g)| if y > T::zero() { g } else { T::zero() }).collect(),
                    Activation::Sigmoid => ys.iter().zip(d).map(|(&y, &g)| g * y * (T::one() - y)).collect(),
                    Activation::Tanh => ys.iter().zip(d).map(|(&y, &g)| g * (T::one() - y * y)).collect(),
                };
                res.push((*x, like(*x, g)?));
            }
            Op::Softmax { x } => {
                let (n, c, h, w) = out.dims4()?;
                let hw = h * w;
                let y = out.data();
                let mut g = vec![T::zero(); y.len()];
                for b in 0..n {
                    let base = b * c * hw;
                    for p in 0..hw {
                        let mut dot = T::zero();
                        for ch in 0..c {
                            dot += y[base + ch * hw + p] * d[base + ch * hw + p];
                        }
                        for ch in 0..c {
                            let i = base + ch * hw + p;
                            g[i] = y[i] * (d[i] - dot);
                        }
                    }
                }
                res.push((*x, like(*x, g)?));
            }
            Op::MaxPool { x, argmax } => {
                res.push((*x, like(*x, pool::max_backward(self.value(*x).numel(), argmax, d))?));
            }
            Op::AvgPool { x, geom } => {
                res.push((*x, like(*x, pool::avg_backward(geom, d))?));
            }
            Op::Upsample { x, factor } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                res.push((*x, like(*x, upsample::backward(n * c, h, w, *factor, d))?));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (dx, dg, db) = norm::train_backward((n, c, h * w), xhat, inv_std, self.value(*gamma).data(), d);
                res.push((*x, like(*x, dx)?));
                res.push((*gamma, like(*gamma, dg)?));
                res.push((*beta, like(*beta, db)?));
            }
            Op::ChannelAffine { x, gamma, beta, mean, inv_std } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let (xs, gs) = (self.value(*x).data(), self.value(*gamma).data());
                let mut dx = vec![T::zero(); xs.len()];
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            dx[i] = d[i] * gs[ch] * inv_std[ch];
                            dg[ch] += d[i] * (xs[i] - mean[ch]) * inv_std[ch];
                            db[ch] += d[i];
                        }
                    }
                }
                res.push((*x, like(*x, dx)?));
                res.push((*gamma, like(*gamma, dg)?));
                res.push((*beta, like(*beta, db)?));
            }
            Op::Concat { parts } => {
                let (n, total_c, h, w) = out.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let mut g = Vec::with_capacity(n * pc * hw);
                    for b in 0..n {
                        let start = (b * total_c + offset) * hw;
                        g.extend_from_slice(&d[start..start + pc * hw]);
                    }
                    offset += pc;
                    res.push((p, like(p, g)?));
                }
            }
            Op::Add { a, b } => {
                res.push((*a, dy.clone()));
                res.push((*b, dy.clone()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                res.push((*a, like(*a, bv.iter().zip(d).map(|(&y, &g)| y * g).collect())?));
                res.push((*b, like(*b, av.iter().zip(d).map(|(&y, &g)| y * g).collect())?));
            }
            Op::Scale { x, c } => res.push((*x, dy.map(|g| g * *c))),
            Op::AddScalar { x } => res.push((*x, dy.clone())),
            Op::Sum { x } => res.push((*x, Tensor::full(self.shape(*x), d[0]))),
            Op::WeightedCe { probs, labels, weights } => {
                let (n, c, h, w) = self.value(*probs).dims4()?;
                let hw = h * w;
                let p = self.value(*probs).data();
                let k = d[0] / T::lit((n * hw) as f64);
                let floor = T::lit(CE_FLOOR);
                let mut g = vec![T::zero(); p.len()];
                for (i, &t) in labels.iter().enumerate() {
                    let j = ((i / hw) * c + t) * hw + i % hw;
                    g[j] = -k * weights[t] / (p[j] + floor);
                }
                res.push((*probs, like(*probs, g)?));
            }
            Op::Dice { pred, target, eps } => {
                let p = self.value(*pred).data();
                let s = overlap_sums(p, target);
                let two = T::lit(2.0);
                let num = two * s.inter + *eps;
                let den = s.pred + s.target + *eps;
                let g = target.iter().map(|&y| -d[0] * (two * y * den - num) / (den * den)).collect();
                res.push((*pred, like(*pred, g)?));
            }
            Op::Jaccard { pred, target, eps } => {
                let p = self.value(*pred).data();
                let s = overlap_sums(p, target);
                let num = s.inter + *eps;
                let den = s.pred + s.target - s.inter + *eps;
                let g = target
                    .iter()
                    .map(|&y| -d[0] * (y * den - num * (T::one() - y)) / (den * den))
                    .collect();
                res.push((*pred, like(*pred, g)?));
            }
        }
        Ok(res)
    }
}

const CE_FLOOR: f64 = 1e-12;

struct OverlapSums<T> {
    inter: T,
    pred: T,
    target: T,
}

fn overlap_sums<T: Scalar>(p: &[T], y: &[T]) -> OverlapSums<T> {
    let mut s = OverlapSums { inter: T::zero(), pred: T::zero(), target: T::zero() };
    for (&pv, &yv) in p.iter().zip(y) {
        s.inter += pv * yv;
        s.pred += pv;
        s.target += yv;
    }
    s
}

/// Logistic function clamped one machine epsilon inside (0, 1), so the
/// output stays a valid open-interval probability even where it saturates.
fn stable_sigmoid<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        return v;
    }
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    y.max(T::epsilon()).min(T::one() - T::epsilon())
}
