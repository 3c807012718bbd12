//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Nodes are appended in evaluation order, so walking the tape
//! backwards is a valid reverse topological order. [`Tape::backward`]
//! consumes the tape: one tape per forward/backward pass.
//!
//! Only the shapes the model needs are supported; there is no general
//! broadcasting.

use crate::error::{dim_err, Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    AddScalar(Var),
    GlobalAvgPool(Var),
    DepthwiseConv(Var, Var),
    ChannelScale(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SegmentMean(Var, usize),
    RepeatRows(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Vec<f64>),
    Pcc(Var, Vec<f64>),
    GradScale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Exponent argument to the logistic function is clamped to this magnitude.
pub const SIGMOID_CLAMP: f64 = 500.0;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(dim_err(op, t.shape(), &[0, 0])),
    }
}

impl Tape {
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a leaf that receives a gradient but is not a model parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Records a trainable parameter. Registration order is preserved in
    /// [`Gradients::params`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.zero_grad();
        let v = self.push(value.with_requires_grad(true), Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul(a, b),
            needs,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let shape = self.shape(a).to_vec();
        let out = self.value(a).values().iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.push(
            Tensor::new(shape, out).expect("elementwise map preserves shape"),
            op,
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[M,N] + [N]`, the bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(x), "add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(dim_err("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let bv = self.value(bias).values();
        let out = self
            .value(x)
            .values()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRowBias(x, bias), needs))
    }

    /// `[M,N] * [M,1]`, each row scaled by its own scalar.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(x), "mul_col")?;
        if self.shape(col) != [m, 1] {
            return Err(dim_err("mul_col", self.shape(x), self.shape(col)));
        }
        let cv = self.value(col).values();
        let out = self
            .value(x)
            .values()
            .chunks(n)
            .zip(cv)
            .flat_map(|(row, &s)| row.iter().map(move |a| a * s))
            .collect();
        let needs = self.needs(x) || self.needs(col);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulCol(x, col), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    /// Forward identity whose backward multiplies the incoming gradient by
    /// `factor`.
    pub fn grad_scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::GradScale(a, factor), |x| x)
    }

    /// `[B,C,H,W] -> [B,C]`, mean over the spatial axes.
    pub fn global_average_pool(&mut self, v: Var) -> Result<Var> {
        let (b, c, hw) = match *self.shape(v) {
            [b, c, h, w] => (b, c, h * w),
            _ => return Err(dim_err("global_average_pool", self.shape(v), &[0, 0, 0, 0])),
        };
        if hw == 0 {
            return Err(Error::Degenerate("global_average_pool over H*W == 0".into()));
        }
        let out = self
            .value(v)
            .values()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let needs = self.needs(v);
        Ok(self.push(Tensor::new(vec![b, c], out)?, Op::GlobalAvgPool(v), needs))
    }

    /// Per-channel 1D cross-correlation along time with zero "same" padding.
    ///
    /// Input is `[T,K]` or `[B,T,K]` (each batch item padded independently);
    /// kernel is `[K,W]` with odd `W`. Taps are summed left to right.
    pub fn depthwise_temporal_conv1d(&mut self, a: Var, kernel: Var) -> Result<Var> {
        let (batch, t, k) = conv_dims(self.shape(a))?;
        let (kk, w) = matrix_dims(self.value(kernel), "depthwise_temporal_conv1d")?;
        if kk != k {
            return Err(dim_err("depthwise_temporal_conv1d", self.shape(a), self.shape(kernel)));
        }
        if w % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel width must be odd, got {w}")));
        }
        let out = conv_forward(self.value(a).values(), self.value(kernel).values(), batch, t, k, w);
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(kernel);
        Ok(self.push(Tensor::new(shape, out)?, Op::DepthwiseConv(a, kernel), needs))
    }

    /// `[B,C,H,W] * [B,C]`, each channel plane scaled by one scalar.
    pub fn channel_scale(&mut self, v: Var, s: Var) -> Result<Var> {
        let (b, c, hw) = match *self.shape(v) {
            [b, c, h, w] => (b, c, h * w),
            _ => return Err(dim_err("channel_scale", self.shape(v), self.shape(s))),
        };
        if self.shape(s) != [b, c] {
            return Err(dim_err("channel_scale", self.shape(v), self.shape(s)));
        }
        let sv = self.value(s).values();
        let out = self
            .value(v)
            .values()
            .chunks(hw)
            .zip(sv)
            .flat_map(|(plane, &m)| plane.iter().map(move |x| x * m))
            .collect();
        let shape = self.shape(v).to_vec();
        let needs = self.needs(v) || self.needs(s);
        Ok(self.push(Tensor::new(shape, out)?, Op::ChannelScale(v, s), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Degenerate("concat_cols of nothing".into()))?;
        let (m, _) = matrix_dims(self.value(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = matrix_dims(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Degenerate("concat_rows of nothing".into()))?;
        let (_, n) = matrix_dims(self.value(first), "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = matrix_dims(self.value(p), "concat_rows")?;
            if pn != n {
                return Err(dim_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).values());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![rows, n], out)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// `[B*T, N] -> [B, N]`: mean over each run of `segment` consecutive rows.
    pub fn segment_mean(&mut self, x: Var, segment: usize) -> Result<Var> {
        let (rows, n) = matrix_dims(self.value(x), "segment_mean")?;
        if segment == 0 || rows % segment != 0 {
            return Err(dim_err("segment_mean", self.shape(x), &[segment]));
        }
        let groups = rows / segment;
        let xv = self.value(x).values();
        let mut out = vec![0.0; groups * n];
        for g in 0..groups {
            let acc = &mut out[g * n..(g + 1) * n];
            for r in 0..segment {
                let row = &xv[(g * segment + r) * n..(g * segment + r + 1) * n];
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            acc.iter_mut().for_each(|a| *a /= segment as f64);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![groups, n], out)?, Op::SegmentMean(x, segment), needs))
    }

    /// `[B, N] -> [B*T, N]`: each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (rows, n) = matrix_dims(self.value(x), "repeat_rows")?;
        if times == 0 {
            return Err(Error::Degenerate("repeat_rows with zero repeats".into()));
        }
        let xv = self.value(x).values();
        let mut out = Vec::with_capacity(rows * times * n);
        for row in xv.chunks(n) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![rows * times, n], out)?, Op::RepeatRows(x, times), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.values().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Mean squared error against fixed targets.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).values();
        if p.len() != target.len() {
            return Err(dim_err("mse", self.shape(pred), &[target.len()]));
        }
        let loss = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let needs = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.to_vec()), needs))
    }

    /// `1 - pearson(pred, target)` over the flattened predictions.
    ///
    /// Fails with [`Error::ZeroVariance`] when either side is constant.
    pub fn pcc_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).values();
        if p.len() != target.len() {
            return Err(dim_err("pcc_loss", self.shape(pred), &[target.len()]));
        }
        if p.len() < 2 {
            return Err(Error::Degenerate("pcc_loss needs at least two samples".into()));
        }
        let stats = PearsonStats::new(p, target)?;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(1.0 - stats.rho),
            Op::Pcc(pred, target.to_vec()),
            needs,
        ))
    }

    /// Propagates d(root)/d(node) through the tape. `root` must be a scalar.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(dim_err("backward", self.shape(root), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let params = self.params.clone();
        let shapes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients {
            grads,
            params,
            lens: shapes,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(&self.nodes[a.0].value, "matmul")?;
                let n = self.nodes[b.0].value.shape()[1];
                let (av, bv) = (val(a), val(b));
                // dA = G · Bᵀ
                acc(a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            let brow = &mut gb[p * n..(p + 1) * n];
                            brow.iter_mut().zip(grow).for_each(|(o, y)| *o += x * y);
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| add_into(gb, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            &Op::AddRowBias(x, bias) => {
                let n = self.nodes[bias.0].value.len();
                acc(x, &mut |gx| add_into(gx, g));
                acc(bias, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::MulCol(x, col) => {
                let n = self.nodes[x.0].value.shape()[1];
                let (xv, cv) = (val(x), val(col));
                acc(x, &mut |gx| {
                    for (i, &s) in cv.iter().enumerate() {
                        for j in 0..n {
                            gx[i * n + j] += g[i * n + j] * s;
                        }
                    }
                });
                acc(col, &mut |gc| {
                    for (i, o) in gc.iter_mut().enumerate() {
                        *o += (0..n).map(|j| g[i * n + j] * xv[i * n + j]).sum::<f64>();
                    }
                });
            }
            &Op::Relu(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                let y = node.value.values();
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            &Op::Scale(a, s) | &Op::GradScale(a, s) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += s * x));
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                acc(a, &mut |ga| add_into(ga, g));
            }
            &Op::GlobalAvgPool(v) => {
                let s = self.nodes[v.0].value.shape();
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f64;
                acc(v, &mut |gv| {
                    for (plane, &gi) in gv.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|o| *o += gi * inv);
                    }
                });
            }
            &Op::DepthwiseConv(a, kernel) => {
                let (batch, t, k) = conv_dims(self.nodes[a.0].value.shape())?;
                let w = self.nodes[kernel.0].value.shape()[1];
                let (av, kv) = (val(a), val(kernel));
                let half = (w / 2) as isize;
                acc(a, &mut |ga| {
                    for b in 0..batch {
                        let base = b * t * k;
                        for ti in 0..t {
                            for ki in 0..k {
                                let go = g[base + ti * k + ki];
                                for j in 0..w {
                                    let src = ti as isize + j as isize - half;
                                    if src >= 0 && (src as usize) < t {
                                        ga[base + src as usize * k + ki] += kv[ki * w + j] * go;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(kernel, &mut |gk| {
                    for b in 0..batch {
                        let base = b * t * k;
                        for ti in 0..t {
                            for ki in 0..k {
                                let go = g[base + ti * k + ki];
                                for j in 0..w {
                                    let src = ti as isize + j as isize - half;
                                    if src >= 0 && (src as usize) < t {
                                        gk[ki * w + j] += av[base + src as usize * k + ki] * go;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            &Op::ChannelScale(v, s) => {
                let sh = self.nodes[v.0].value.shape();
                let hw = sh[2] * sh[3];
                let (vv, sv) = (val(v), val(s));
                acc(v, &mut |gv| {
                    for (ci, &m) in sv.iter().enumerate() {
                        for p in ci * hw..(ci + 1) * hw {
                            gv[p] += g[p] * m;
                        }
                    }
                });
                acc(s, &mut |gs| {
                    for (ci, o) in gs.iter_mut().enumerate() {
                        *o += (ci * hw..(ci + 1) * hw).map(|p| g[p] * vv[p]).sum::<f64>();
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.shape()[1];
                    acc(p, &mut |gp| {
                        for i in 0..m {
                            let src = &g[i * total + offset..i * total + offset + w];
                            add_into(&mut gp[i * w..(i + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            &Op::SegmentMean(x, segment) => {
                let n = node.value.shape()[1];
                let inv = 1.0 / segment as f64;
                acc(x, &mut |gx| {
                    for (r, row) in gx.chunks_mut(n).enumerate() {
                        let grow = &g[(r / segment) * n..(r / segment + 1) * n];
                        row.iter_mut().zip(grow).for_each(|(o, y)| *o += y * inv);
                    }
                });
            }
            &Op::RepeatRows(x, times) => {
                let n = node.value.shape()[1];
                acc(x, &mut |gx| {
                    for (r, grow) in g.chunks(n).enumerate() {
                        let dst = &mut gx[(r / times) * n..(r / times + 1) * n];
                        add_into(dst, grow);
                    }
                });
            }
            &Op::Sum(x) => {
                acc(x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            &Op::Mean(x) => {
                let inv = g[0] / self.nodes[x.0].value.len() as f64;
                acc(x, &mut |gx| gx.iter_mut().for_each(|o| *o += inv));
            }
            Op::Mse(pred, target) => {
                let pv = val(*pred);
                let scale = 2.0 * g[0] / pv.len() as f64;
                acc(*pred, &mut |gp| {
                    for i in 0..pv.len() {
                        gp[i] += scale * (pv[i] - target[i]);
                    }
                });
            }
            Op::Pcc(pred, target) => {
                let pv = val(*pred);
                let stats = PearsonStats::new(pv, target)?;
                acc(*pred, &mut |gp| {
                    for i in 0..pv.len() {
                        // d(1 - rho)/dp_i
                        gp[i] -= g[0] * stats.drho_dpred(pv[i], target[i]);
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
}

fn conv_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, k] => Ok((1, t, k)),
        [b, t, k] => Ok((b, t, k)),
        _ => Err(dim_err("depthwise_temporal_conv1d", shape, &[0, 0])),
    }
}

fn conv_forward(a: &[f64], kernel: &[f64], batch: usize, t: usize, k: usize, w: usize) -> Vec<f64> {
    let half = (w / 2) as isize;
    let mut out = vec![0.0; batch * t * k];
    for b in 0..batch {
        let base = b * t * k;
        for ti in 0..t {
            for ki in 0..k {
                let mut s = 0.0;
                for j in 0..w {
                    let src = ti as isize + j as isize - half;
                    if src >= 0 && (src as usize) < t {
                        s += kernel[ki * w + j] * a[base + src as usize * k + ki];
                    }
                }
                out[base + ti * k + ki] = s;
            }
        }
    }
    out
}

/// Centered moments shared by the Pearson forward and backward passes.
struct PearsonStats {
    mean_p: f64,
    mean_t: f64,
    norm_p: f64,
    norm_t: f64,
    rho: f64,
}

impl PearsonStats {
    fn new(p: &[f64], t: &[f64]) -> Result<Self> {
        let n = p.len() as f64;
        let mean_p = p.iter().sum::<f64>() / n;
        let mean_t = t.iter().sum::<f64>() / n;
        let (mut spp, mut stt, mut spt) = (0.0, 0.0, 0.0);
        for (&a, &b) in p.iter().zip(t) {
            let (da, db) = (a - mean_p, b - mean_t);
            spp += da * da;
            stt += db * db;
            spt += da * db;
        }
        if spp <= 0.0 {
            return Err(Error::ZeroVariance("predictions"));
        }
        if stt <= 0.0 {
            return Err(Error::ZeroVariance("targets"));
        }
        let (norm_p, norm_t) = (spp.sqrt(), stt.sqrt());
        Ok(Self {
            mean_p,
            mean_t,
            norm_p,
            norm_t,
            rho: (spt / (norm_p * norm_t)).clamp(-1.0, 1.0),
        })
    }

    fn drho_dpred(&self, p: f64, t: f64) -> f64 {
        (t - self.mean_t) / (self.norm_p * self.norm_t)
            - self.rho * (p - self.mean_p) / (self.norm_p * self.norm_p)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Var>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` did not
    /// influence the root.
    pub fn get(&self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    /// Parameter gradients in registration order.
    pub fn params(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.params.iter().map(|&v| self.get(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::new();
        let i = tape.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = tape.constant(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out).values(), &[3.0, 4.0, 5.0, 6.0]);

        let r = tape.constant(mat(&[&[1.0, 2.0]]));
        let c = tape.constant(mat(&[&[3.0], &[4.0]]));
        let out = tape.matmul(r, c).unwrap();
        assert_eq!(tape.shape(out), &[1, 1]);
        assert_eq!(tape.value(out).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn sum_matmul_gradient_is_ones_times_b_transpose() {
        let mut tape = Tape::new();
        let a = tape.variable(mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let b = tape.constant(mat(&[&[1.0, -1.0], &[2.0, 0.5], &[0.0, 3.0]]));
        let y = tape.matmul(a, b).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        // row sums of B, repeated for every row of A
        assert_eq!(grads.get(a), vec![0.0, 2.5, 3.0, 0.0, 2.5, 3.0]);
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let lo = sigmoid_scalar(-50.0);
        assert!(lo < 1e-20 && lo > 0.0);
        assert!(sigmoid_scalar(-1e6).is_finite());
        assert!(sigmoid_scalar(1e6) <= 1.0);
        assert!(sigmoid_scalar(-1e6) > 0.0);
    }

    #[test]
    fn gap_constant_and_hand_mean() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::filled(&[2, 3, 4, 5], 1.75));
        let p = tape.global_average_pool(v).unwrap();
        assert_eq!(tape.shape(p), &[2, 3]);
        assert!(tape.value(p).values().iter().all(|&x| x == 1.75));

        let v = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = tape.global_average_pool(v).unwrap();
        assert_eq!(tape.value(p).values(), &[2.5]);

        let bad = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.global_average_pool(bad).is_err());
    }

    #[test]
    fn gap_backward_is_uniform() {
        let mut tape = Tape::new();
        let v = tape.variable(Tensor::filled(&[1, 2, 2, 2], 3.0));
        let p = tape.global_average_pool(v).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap().get(v);
        assert!(g.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn conv_identity_and_box() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(&[&[0.1, 0.9], &[0.5, 0.2], &[0.3, 0.7]]));
        let ident = tape.constant(mat(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]));
        let x = tape.depthwise_temporal_conv1d(a, ident).unwrap();
        assert_eq!(tape.value(x).values(), tape.value(a).values());

        let third = 1.0 / 3.0;
        let sig = tape.constant(mat(&[&[0.0], &[3.0], &[0.0], &[0.0]]));
        let boxk = tape.constant(mat(&[&[third, third, third]]));
        let x = tape.depthwise_temporal_conv1d(sig, boxk).unwrap();
        assert_eq!(tape.value(x).values(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_rejects_even_width() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[4, 2]));
        let k = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            tape.depthwise_temporal_conv1d(a, k),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pcc_loss_values() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let l = tape.pcc_loss(p, &[1.0, 2.0, 3.0]).unwrap();
        assert!(tape.value(l).values()[0].abs() < 1e-15);
        let l = tape.pcc_loss(p, &[-1.0, -2.0, -3.0]).unwrap();
        assert!((tape.value(l).values()[0] - 2.0).abs() < 1e-15);
        let c = tape.constant(Tensor::filled(&[3], 0.5));
        assert!(matches!(
            tape.pcc_loss(c, &[1.0, 2.0, 3.0]),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::zeros(&[2]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn param_registration_order_is_kept() {
        let mut tape = Tape::new();
        let p0 = tape.param(&Tensor::filled(&[2], 1.0));
        let p1 = tape.param(&Tensor::filled(&[1], 2.0));
        let y = tape.mul(p0, p0).unwrap();
        let s0 = tape.sum(y);
        let s1 = tape.sum(p1);
        let tot = tape.add(s0, s1).unwrap();
        let grads = tape.backward(tot).unwrap();
        let all: Vec<_> = grads.params().collect();
        assert_eq!(all, vec![vec![2.0, 2.0], vec![1.0]]);
    }
}
