//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node; [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients for the nodes that need them.
//! Operations are recorded eagerly, so values are available immediately.

pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeom;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    GlobalAvgPool(Var),
    Softmax(Var),
    ChannelScale(Var, Var),
    NarrowH {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Upsample2x(Var),
    AffineGrid {
        theta: Var,
        oh: usize,
        ow: usize,
    },
    GridSample {
        x: Var,
        grid: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the reduced axes.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` where no gradient flowed.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(z: f64) -> f64 {
    z.min(0.0) - (-z.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf (parameter or probed input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `log(sigmoid(x))`, evaluated without cancellation.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogSigmoid(x), log_sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(x);
        self.push(v, Op::Mean(x), ng)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let (&(k0, v0), rest) = terms
            .split_first()
            .ok_or_else(|| Error::shape("weighted_sum of no terms"))?;
        let mut acc = self.scale(v0, k0);
        for &(k, v) in rest {
            let s = self.scale(v, k);
            acc = self.add(acc, s)?;
        }
        Ok(acc)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// 2-D convolution; `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c {
            return Err(Error::shape(format!(
                "conv2d: input has {c} channels, kernel expects {wc}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(format!("conv2d: bias shape {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c, h, wd, kh, kw, stride, pad).ok_or_else(|| {
            Error::shape(format!("conv2d: kernel {kh}x{kw} too large for {h}x{wd} with pad {pad}"))
        })?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            o,
            &geom,
        );
        let value = Tensor::new([n, o, geom.oh, geom.ow], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// `x · wᵀ + b`; `x: [N,in]`, `w: [out,in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if win != fin {
            return Err(Error::shape(format!(
                "linear: input width {fin}, weight expects {win}"
            )));
        }
        let mut out = vec![0.0; n * fout];
        let beta = if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != fout {
                return Err(Error::shape(format!("linear: bias length {}", bv.len())));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
            1.0
        } else {
            0.0
        };
        kernels::gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            (fin as isize, 1),
            self.value(w).data(),
            (1, fin as isize),
            beta,
            &mut out,
        );
        let value = Tensor::new([n, fout], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    /// Batch normalization over every axis except 1. With `running = None` the
    /// batch statistics are used (and returned); otherwise the given
    /// `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xt = self.value(x);
        let shape = xt.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("batch_norm: rank {} input", shape.len())));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(format!("batch_norm: affine params must have {c} entries")));
        }
        let count = n * inner;
        let data = xt.data();
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let s = &data[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                        mean[ch] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let s = &data[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                        var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                for i in r {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: stats.is_some(),
        };
        Ok((self.push(value, op, ng), stats))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new([n, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), ng))
    }

    /// Softmax over the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, k) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(k) {
            softmax_in_place(row);
        }
        let value = Tensor::new([n, k], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    /// Scale channel `k` of `x: [N,C,H,W]` by `m[n, k]`.
    pub fn channel_scale(&mut self, x: Var, m: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(m) != [n, c] {
            return Err(Error::shape(format!(
                "channel_scale: weights {:?} do not match {} channels",
                self.shape(m),
                c
            )));
        }
        let hw = h * w;
        let mv = self.value(m).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(hw)
            .zip(mv)
            .flat_map(|(p, &s)| p.iter().map(move |v| v * s))
            .collect();
        let value = Tensor::new([n, c, h, w], out)?;
        let ng = self.ng(x) || self.ng(m);
        Ok(self.push(value, Op::ChannelScale(x, m), ng))
    }

    /// Rows `[start, start + len)` of an NCHW map.
    pub fn narrow_h(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start + len > h || len == 0 {
            return Err(Error::shape(format!(
                "narrow_h: rows {start}..{} outside height {h}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * len * w);
        for p in src.chunks(h * w) {
            out.extend_from_slice(&p[start * w..(start + len) * w]);
        }
        let value = Tensor::new([n, c, len, w], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::NarrowH { x, start }, ng))
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of no tensors"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() < 2 {
            return Err(Error::shape("concat needs rank >= 2"));
        }
        let n = s0[0];
        let inner: usize = s0[2..].iter().product();
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len() || s[0] != n || s[2..] != s0[2..] {
                return Err(Error::shape(format!("concat: {:?} vs {:?}", s, s0)));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(n * total_c * inner);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let cb = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[b * cb..(b + 1) * cb]);
            }
        }
        let mut shape = s0;
        shape[1] = total_c;
        let value = Tensor::new(shape, out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    /// Nearest-neighbour 2x upsampling of an NCHW map.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * 4 * h * w];
        for (pi, p) in src.chunks(h * w).enumerate() {
            let dst = &mut out[pi * 4 * h * w..(pi + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = p[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Upsample2x(x), ng))
    }

    /// Sampling grid `[N, oh, ow, 2]` from affine parameters `theta: [N, 6]`.
    pub fn affine_grid(&mut self, theta: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, six) = self.value(theta).dims2()?;
        if six != 6 {
            return Err(Error::shape(format!("affine_grid: theta has {six} columns, need 6")));
        }
        let grid = kernels::affine_grid(self.value(theta).data(), n, oh, ow);
        let value = Tensor::new([n, oh, ow, 2], grid)?;
        let ng = self.ng(theta);
        Ok(self.push(value, Op::AffineGrid { theta, oh, ow }, ng))
    }

    /// Bilinear sampling of `x` at `grid` (normalized coordinates, zero padding).
    pub fn grid_sample(&mut self, x: Var, grid: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let gs = self.shape(grid).to_vec();
        if gs.len() != 4 || gs[0] != dims.0 || gs[3] != 2 {
            return Err(Error::shape(format!("grid_sample: grid shape {:?}", gs)));
        }
        let (oh, ow) = (gs[1], gs[2]);
        let out = kernels::grid_sample(self.value(x).data(), dims, self.value(grid).data(), oh, ow);
        let value = Tensor::new([dims.0, dims.1, oh, ow], out)?;
        let ng = self.ng(x) || self.ng(grid);
        Ok(self.push(value, Op::GridSample { x, grid }, ng))
    }

    /// Mean softmax cross-entropy of `logits: [N,K]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n || n == 0 {
            return Err(Error::shape(format!(
                "cross_entropy: {} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::validation(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(k).zip(labels) {
            loss += log_sum_exp(row) - row[y];
            softmax_in_place(row);
        }
        let value = Tensor::scalar(loss / n as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients(grads))
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v).to_vec(), data);
        let dyd = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    acc(*a, like(*a, dyd.iter().zip(vb).map(|(g, y)| g * y).collect())?);
                }
                if self.ng(*b) {
                    acc(*b, like(*b, dyd.iter().zip(va).map(|(g, x)| g * x).collect())?);
                }
            }
            Op::Scale(x, k) => acc(*x, dy.map(|g| g * k)),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, like(*x, dyd.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect())?);
            }
            Op::LeakyRelu(x, s) => {
                let xv = self.value(*x).data();
                acc(*x, like(*x, dyd.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { g * s }).collect())?);
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                acc(*x, like(*x, dyd.iter().zip(yv).map(|(g, y)| g * y * (1.0 - y)).collect())?);
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x).data();
                acc(*x, like(*x, dyd.iter().zip(xv).map(|(g, v)| g * sigmoid(-v)).collect())?);
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                acc(*x, like(*x, dyd.iter().zip(xv).map(|(g, v)| g * sign(*v)).collect())?);
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x).to_vec(), dy.item())),
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1) as f64;
                acc(*x, Tensor::full(self.shape(*x).to_vec(), dy.item() / n));
            }
            Op::Reshape(x) => acc(*x, like(*x, dyd.to_vec())?),
            Op::Conv2d { x, w, b, geom } => {
                let n = self.shape(*x)[0];
                let o = self.shape(*w)[0];
                let g = kernels::conv2d_backward(
                    self.value(*x).data(),
                    n,
                    self.value(*w).data(),
                    o,
                    geom,
                    dyd,
                    self.ng(*x),
                    self.ng(*w),
                    b.is_some_and(|b| self.ng(b)),
                );
                if let Some(dx) = g.dx {
                    acc(*x, like(*x, dx)?);
                }
                if let Some(dw) = g.dw {
                    acc(*w, like(*w, dw)?);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    acc(*b, like(*b, db)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2()?;
                let fout = self.shape(*w)[0];
                if self.ng(*x) {
                    let mut dx = vec![0.0; n * fin];
                    // dx = dy · W
                    kernels::gemm(n, fout, fin, dyd, (fout as isize, 1), self.value(*w).data(), (fin as isize, 1), 0.0, &mut dx);
                    acc(*x, like(*x, dx)?);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    // dW = dyᵀ · x
                    kernels::gemm(fout, n, fin, dyd, (1, fout as isize), self.value(*x).data(), (fin as isize, 1), 0.0, &mut dw);
                    acc(*w, like(*w, dw)?);
                }
                if let Some(b) = b.filter(|b| self.ng(*b)) {
                    let mut db = vec![0.0; fout];
                    for row in dyd.chunks(fout) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    acc(b, like(b, db)?);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let m = (n * inner) as f64;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                            dgamma[ch] += dyd[i] * xhat[i];
                            dbeta[ch] += dyd[i];
                        }
                    }
                }
                if self.ng(*x) {
                    let mut dx = vec![0.0; dyd.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                                dx[i] = if *batch_stats {
                                    // dxhat = dy * gamma; sums of dxhat are gamma * dbeta etc.
                                    gv[ch] * inv_std[ch] / m
                                        * (m * dyd[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                } else {
                                    gv[ch] * inv_std[ch] * dyd[i]
                                };
                            }
                        }
                    }
                    acc(*x, like(*x, dx)?);
                }
                acc(*gamma, like(*gamma, dgamma)?);
                acc(*beta, like(*beta, dbeta)?);
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let dx: Vec<f64> = dyd.iter().flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw)).collect();
                acc(*x, like(*x, dx)?);
            }
            Op::Softmax(x) => {
                let k = self.shape(*x)[1];
                let yv = node.value.data();
                let mut dx = vec![0.0; yv.len()];
                for ((d, y), g) in dx.chunks_mut(k).zip(yv.chunks(k)).zip(dyd.chunks(k)) {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        d[j] = y[j] * (g[j] - dot);
                    }
                }
                acc(*x, like(*x, dx)?);
            }
            Op::ChannelScale(x, m) => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let mv = self.value(*m).data();
                let xv = self.value(*x).data();
                if self.ng(*x) {
                    let dx: Vec<f64> = dyd
                        .chunks(hw)
                        .zip(mv)
                        .flat_map(|(g, &s)| g.iter().map(move |v| v * s))
                        .collect();
                    acc(*x, like(*x, dx)?);
                }
                if self.ng(*m) {
                    let dm: Vec<f64> = dyd
                        .chunks(hw)
                        .zip(xv.chunks(hw))
                        .map(|(g, xs)| g.iter().zip(xs).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*m, like(*m, dm)?);
                }
            }
            Op::NarrowH { x, start } => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let len = node.value.shape()[2];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (dp, gp) in dx.chunks_mut(h * w).zip(dyd.chunks(len * w)) {
                    dp[start * w..(start + len) * w].copy_from_slice(gp);
                }
                acc(*x, like(*x, dx)?);
            }
            Op::Concat(parts) => {
                let shape = node.value.shape();
                let n = shape[0];
                let inner: usize = shape[2..].iter().product();
                let total = shape[1] * inner;
                let mut offset = 0;
                for &p in parts {
                    let cb = self.shape(p)[1] * inner;
                    if self.ng(p) {
                        let mut dp = Vec::with_capacity(n * cb);
                        for b in 0..n {
                            dp.extend_from_slice(&dyd[b * total + offset..b * total + offset + cb]);
                        }
                        acc(p, like(p, dp)?);
                    }
                    offset += cb;
                }
            }
            Op::Upsample2x(x) => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (dp, gp) in dx.chunks_mut(h * w).zip(dyd.chunks(4 * h * w)) {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dp[(y / 2) * w + xx / 2] += gp[y * 2 * w + xx];
                        }
                    }
                }
                acc(*x, like(*x, dx)?);
            }
            Op::AffineGrid { theta, oh, ow } => {
                let n = self.shape(*theta)[0];
                acc(*theta, like(*theta, kernels::affine_grid_backward(dyd, n, *oh, *ow))?);
            }
            Op::GridSample { x, grid } => {
                let dims = self.value(*x).dims4()?;
                let gs = self.shape(*grid);
                let (dx, dgrid) = kernels::grid_sample_backward(
                    self.value(*x).data(),
                    dims,
                    self.value(*grid).data(),
                    gs[1],
                    gs[2],
                    dyd,
                    self.ng(*x),
                    self.ng(*grid),
                );
                if let Some(dx) = dx {
                    acc(*x, like(*x, dx)?);
                }
                if let Some(dg) = dgrid {
                    acc(*grid, like(*grid, dg)?);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let n = labels.len() as f64;
                let scale = dy.item() / n;
                let mut dl = probs.clone();
                for (row, &y) in dl.chunks_mut(k).zip(labels) {
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(*logits, like(*logits, dl)?);
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_through_shared_node() {
        // f(x) = sum(x * x + 3x), df/dx = 2x + 3
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let s = g.add(sq, lin).unwrap();
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0, -1.0, 4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full([2], 2.0));
        let x = g.leaf(Tensor::full([2], 1.0));
        let y = g.mul(c, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros([1, 3]));
        assert!(g.cross_entropy(l, &[3]).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-12);
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }
}
