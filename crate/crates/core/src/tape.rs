//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built fresh for each forward pass. Every operation appends a
//! node holding its output value, its inputs and whatever it needs for the
//! backward rule; nodes are therefore always in topological order.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients,
//! summing contributions across fan-out.

use crate::error::{MafError, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Gelu => x * std_normal_cdf(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Gelu => {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                std_normal_cdf(x) + x * pdf
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Geometry of a square-kernel strided convolution lowered to im2col.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Source pixel feeding `(row, col)` of the column matrix, if not padding.
    fn source(&self, row: usize, col: usize) -> Option<usize> {
        let kk = self.kernel * self.kernel;
        let c = row / kk;
        let ki = (row % kk) / self.kernel;
        let kj = row % self.kernel;
        let wo = self.out_width();
        let (oh, ow) = (col / wo, col % wo);
        let h = (oh * self.stride + ki).checked_sub(self.pad)?;
        let w = (ow * self.stride + kj).checked_sub(self.pad)?;
        (h < self.height && w < self.width).then(|| (c * self.height + h) * self.width + w)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    /// `x[M×K] + bias[K]` broadcast over rows.
    AddRowBias(Var, Var),
    /// `x[M×K] + bias[M]` broadcast over columns.
    AddColBias(Var, Var),
    Mul(Var, Var),
    /// `x[M×K] ⊙ gate[1×K]` broadcast over rows.
    MulRowBroadcast(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Act(Var, Activation),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Column-wise max over the rows of `N×K`, giving `1×K`, with the
    /// maximising rows of each column.
    MaxRows(Var, Vec<Vec<usize>>),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Im2Col(Var, ConvGeometry),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not reach
    /// the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_bt")?;
        let (p, k2) = self.dims2(b, "matmul_bt")?;
        if k != k2 {
            return Err(MafError::dim("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * p];
        gemm(
            m,
            k,
            p,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            0.0,
        );
        let out = Tensor::new(&[m, p], out)?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(x)
            .reshape(shape)
            .map_err(|_| MafError::dim("reshape", self.shape(x), shape))?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| MafError::dim("add", self.shape(a), self.shape(b)))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| MafError::dim("mul", self.shape(a), self.shape(b)))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a fixed (non-differentiated) tensor.
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let out = self
            .value(x)
            .zip_map(&mask, |a, b| a * b)
            .map_err(|_| MafError::dim("mul_const", self.shape(x), mask.shape()))?;
        Ok(self.push(out, Op::MulConst(x, mask), &[x]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, k) = self.dims2(x, "add_row_bias")?;
        if self.value(bias).numel() != k {
            return Err(MafError::dim("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(k) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let out = Tensor::new(&[m, k], out)?;
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, k) = self.dims2(x, "add_col_bias")?;
        if self.value(bias).numel() != m {
            return Err(MafError::dim("add_col_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (row, bb) in out.chunks_exact_mut(k).zip(b) {
            row.iter_mut().for_each(|o| *o += bb);
        }
        let out = Tensor::new(&[m, k], out)?;
        Ok(self.push(out, Op::AddColBias(x, bias), &[x, bias]))
    }

    /// `x[M×K] ⊙ gate[1×K]`, the gate repeated down every row.
    pub fn mul_row_broadcast(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (m, k) = self.dims2(x, "mul_row_broadcast")?;
        if self.value(gate).numel() != k {
            return Err(MafError::dim("mul_row_broadcast", self.shape(x), self.shape(gate)));
        }
        let g = self.value(gate).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(k) {
            for (o, gg) in row.iter_mut().zip(g) {
                *o *= gg;
            }
        }
        let out = Tensor::new(&[m, k], out)?;
        Ok(self.push(out, Op::MulRowBroadcast(x, gate), &[x, gate]))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(Activation::Gelu, x)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, k) = self.dims2(x, "softmax_rows")?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let out = Tensor::new(&[m, k], out)?;
        Ok(self.push(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Per-row standardisation followed by the affine `gamma·x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(MafError::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (m, k) = self.dims2(x, "layer_norm")?;
        if self.value(gamma).numel() != k || self.value(beta).numel() != k {
            return Err(MafError::dim("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * k];
        let mut out = vec![0.0; m * k];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &xs[i * k..(i + 1) * k];
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..k {
                let h = (row[j] - mean) * is;
                xhat[i * k + j] = h;
                out[i * k + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(&[m, k], out)?;
        let xhat = Tensor::new(&[m, k], xhat)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Maximum down each column: `N×K → 1×K`. The gradient of a column is
    /// shared equally among rows that tie exactly for its maximum.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (n, k) = self.dims2(x, "max_rows")?;
        let xs = self.value(x).data();
        let mut out = xs[..k].to_vec();
        for i in 1..n {
            for j in 0..k {
                out[j] = out[j].max(xs[i * k + j]);
            }
        }
        let winners = (0..k)
            .map(|j| (0..n).filter(|&i| xs[i * k + j] == out[j]).collect())
            .collect();
        let out = Tensor::new(&[1, k], out)?;
        Ok(self.push(out, Op::MaxRows(x, winners), &[x]))
    }

    /// Mean down each column: `M×K → 1×K`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, k) = self.dims2(x, "mean_rows")?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; k];
        for row in xs.chunks_exact(k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let out = Tensor::new(&[1, k], out)?;
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MafError::Contract("concat_rows of nothing".into()))?;
        let (_, k) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, kk) = self.dims2(p, "concat_rows")?;
            if kk != k {
                return Err(MafError::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(&[rows, k], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MafError::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mm, k) = self.dims2(p, "concat_cols")?;
            if mm != m {
                return Err(MafError::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(k);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &k) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * k..(i + 1) * k]);
            }
        }
        let out = Tensor::new(&[m, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Unfolds `C×H×W` into `(C·k²)×(H_out·W_out)` patch columns.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            &[c, h, w] => (c, h, w),
            s => return Err(MafError::dim("im2col", s, &[0, 0, 0])),
        };
        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel,
            stride,
            pad,
        };
        if h + 2 * pad < kernel || w + 2 * pad < kernel || stride == 0 {
            return Err(MafError::dim("im2col", self.shape(x), &[kernel, kernel]));
        }
        let rows = c * kernel * kernel;
        let cols = geo.out_height() * geo.out_width();
        let xs = self.value(x).data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for col in 0..cols {
                if let Some(src) = geo.source(r, col) {
                    data[r * cols + col] = xs[src];
                }
            }
        }
        let out = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(out, Op::Im2Col(x, geo), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `−log softmax(logits)[label]` for a single logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(MafError::Contract(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let mut probs = z.to_vec();
        softmax_in_place(&mut probs);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(lse - z[label]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Accumulates gradients of the scalar `loss` into every reachable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(MafError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !matches!(node.op, Op::Leaf) {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a, "matmul")?;
                let (_, p) = self.dims2(*b, "matmul")?;
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, p, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * p];
                    gemm(k, m, p, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                    self.accumulate(grads, *b, Tensor::new(&[k, p], db)?);
                }
            }
            Op::MatMulBt(a, b) => {
                // out[m×p] = a[m×k] · b[p×k]ᵀ
                let (m, k) = self.dims2(*a, "matmul_bt")?;
                let (p, _) = self.dims2(*b, "matmul_bt")?;
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, p, k, gd, false, self.value(*b).data(), false, &mut da, 0.0);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; p * k];
                    gemm(p, m, k, gd, true, self.value(*a).data(), false, &mut db, 0.0);
                    self.accumulate(grads, *b, Tensor::new(&[p, k], db)?);
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.transpose2()?);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.reshape(self.shape(*x))?);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        self.accumulate(grads, *v, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MulConst(x, mask) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.zip_map(mask, |a, b| a * b)?);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * c));
                }
            }
            Op::AddRowBias(x, bias) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    let (_, k) = g.dims2("add_row_bias")?;
                    let mut db = vec![0.0; k];
                    for row in gd.chunks_exact(k) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    let shape = self.shape(*bias).to_vec();
                    self.accumulate(grads, *bias, Tensor::new(&shape, db)?);
                }
            }
            Op::AddColBias(x, bias) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    let (_, k) = g.dims2("add_col_bias")?;
                    let db = gd.chunks_exact(k).map(|r| r.iter().sum()).collect();
                    let shape = self.shape(*bias).to_vec();
                    self.accumulate(grads, *bias, Tensor::new(&shape, db)?);
                }
            }
            Op::MulRowBroadcast(x, gate) => {
                let (_, k) = g.dims2("mul_row_broadcast")?;
                let gv = self.value(*gate).data();
                if self.wants(*x) {
                    let mut dx = gd.to_vec();
                    for row in dx.chunks_exact_mut(k) {
                        row.iter_mut().zip(gv).for_each(|(d, s)| *d *= s);
                    }
                    let shape = self.shape(*x).to_vec();
                    self.accumulate(grads, *x, Tensor::new(&shape, dx)?);
                }
                if self.wants(*gate) {
                    let xv = self.value(*x).data();
                    let mut dg = vec![0.0; k];
                    for (grow, xrow) in gd.chunks_exact(k).zip(xv.chunks_exact(k)) {
                        for j in 0..k {
                            dg[j] += grow[j] * xrow[j];
                        }
                    }
                    let shape = self.shape(*gate).to_vec();
                    self.accumulate(grads, *gate, Tensor::new(&shape, dg)?);
                }
            }
            Op::Act(x, kind) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let yv = node.value.data();
                    let dx = gd
                        .iter()
                        .zip(xv.iter().zip(yv))
                        .map(|(gg, (&xx, &yy))| gg * kind.derivative(xx, yy))
                        .collect();
                    let shape = self.shape(*x).to_vec();
                    self.accumulate(grads, *x, Tensor::new(&shape, dx)?);
                }
            }
            Op::SoftmaxRows(x) => {
                if self.wants(*x) {
                    let (m, k) = g.dims2("softmax_rows")?;
                    let y = node.value.data();
                    let mut dx = vec![0.0; m * k];
                    for i in 0..m {
                        let r = i * k..(i + 1) * k;
                        let dot: f64 = gd[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            dx[j] = y[j] * (gd[j] - dot);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(&[m, k], dx)?);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, k) = g.dims2("layer_norm")?;
                let xh = xhat.data();
                if self.wants(*gamma) {
                    let mut dgamma = vec![0.0; k];
                    for i in 0..m {
                        for j in 0..k {
                            dgamma[j] += gd[i * k + j] * xh[i * k + j];
                        }
                    }
                    let shape = self.shape(*gamma).to_vec();
                    self.accumulate(grads, *gamma, Tensor::new(&shape, dgamma)?);
                }
                if self.wants(*beta) {
                    let mut dbeta = vec![0.0; k];
                    for row in gd.chunks_exact(k) {
                        dbeta.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    let shape = self.shape(*beta).to_vec();
                    self.accumulate(grads, *beta, Tensor::new(&shape, dbeta)?);
                }
                if self.wants(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = vec![0.0; m * k];
                    let kf = k as f64;
                    for i in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..k {
                            let dxh = gd[i * k + j] * gam[j];
                            s1 += dxh;
                            s2 += dxh * xh[i * k + j];
                        }
                        for j in 0..k {
                            let dxh = gd[i * k + j] * gam[j];
                            dx[i * k + j] = inv_std[i] / kf * (kf * dxh - s1 - xh[i * k + j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(&[m, k], dx)?);
                }
            }
            Op::MaxRows(x, arg) => {
                if self.wants(*x) {
                    let k = arg.len();
                    let mut dx = Tensor::zeros(self.shape(*x));
                    let d = dx.data_mut();
                    for (j, rows) in arg.iter().enumerate() {
                        let share = gd[j] / rows.len() as f64;
                        for &i in rows {
                            d[i * k + j] += share;
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::MeanRows(x) => {
                if self.wants(*x) {
                    let (m, k) = self.dims2(*x, "mean_rows")?;
                    let mut dx = Vec::with_capacity(m * k);
                    for _ in 0..m {
                        dx.extend(gd.iter().map(|v| v / m as f64));
                    }
                    self.accumulate(grads, *x, Tensor::new(&[m, k], dx)?);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.wants(p) {
                        let shape = self.shape(p).to_vec();
                        self.accumulate(grads, p, Tensor::new(&shape, gd[offset..offset + n].to_vec())?);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2("concat_cols")?;
                let mut col = 0;
                for &p in parts {
                    let (_, k) = self.dims2(p, "concat_cols")?;
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(m * k);
                        for i in 0..m {
                            d.extend_from_slice(&gd[i * total + col..i * total + col + k]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[m, k], d)?);
                    }
                    col += k;
                }
            }
            Op::Im2Col(x, geo) => {
                if self.wants(*x) {
                    let (rows, cols) = g.dims2("im2col")?;
                    let mut dx = Tensor::zeros(self.shape(*x));
                    let d = dx.data_mut();
                    for r in 0..rows {
                        for c in 0..cols {
                            if let Some(src) = geo.source(r, c) {
                                d[src] += gd[r * cols + c];
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, Tensor::full(self.shape(*x), gd[0]));
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                if self.wants(*logits) {
                    let d = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| gd[0] * (p - if i == *label { 1.0 } else { 0.0 }))
                        .collect();
                    let shape = self.shape(*logits).to_vec();
                    self.accumulate(grads, *logits, Tensor::new(&shape, d)?);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 4., -1.]).unwrap());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut t = Tape::new();
        let xv = Tensor::new(&[4], vec![1., -2., 3., 0.5]).unwrap();
        let x = t.param(xv.clone());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), xv.map(|v| 2.0 * v));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones(&[2]));
        let y = t.param(Tensor::ones(&[3]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(y), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones(&[2]));
        assert!(matches!(t.backward(x), Err(MafError::Contract(_))));
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::ones(&[2, 2]));
        let p = t.param(Tensor::ones(&[2, 2]));
        let y = t.matmul(c, c).unwrap();
        assert!(!t.requires_grad(y));
        let z = t.matmul(c, p).unwrap();
        assert!(t.requires_grad(z));
    }

    #[test]
    fn max_rows_routes_gradient_to_argmax() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[0.2, 0.8], &[0.6, 0.1]]));
        let m = t.max_rows(x).unwrap();
        assert_eq!(t.value(m).data(), &[0.6, 0.8]);
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn im2col_stride_two_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[2, 5, 5]));
        let cols = t.im2col(x, 3, 2, 1).unwrap();
        assert_eq!(t.shape(cols), &[18, 9]);
        // Corner output sees padding on its top-left.
        let v = t.value(cols);
        assert_eq!(v.at(&[0, 0]), 0.0);
        assert_eq!(v.at(&[4, 0]), 1.0);
    }
}
