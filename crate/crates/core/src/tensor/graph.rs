use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom, Pool2d};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Operator tag, used in reports and for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    Upsample,
    BatchNorm,
    Prelu,
    Linear,
    GlobalAvgPool,
    Reshape,
    Narrow,
    Add,
    Sub,
    Affine,
    Relu,
    Sqrt,
    Sum,
    Mean,
    Mse,
    MseRows,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::Upsample => "upsample_unpool",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Prelu => "prelu",
            OpKind::Linear => "fully_connected",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Reshape => "reshape",
            OpKind::Narrow => "narrow",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::Sqrt => "sqrt",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Mse => "mse",
            OpKind::MseRows => "mse_rows",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Negates every gradient produced by one operator's backward rule. Only
/// useful for checking that the gradient checker catches broken rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultInjection {
    pub op: OpKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of train-mode batches folded in so far.
    pub tracked: u64,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], tracked: 0 }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, k: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, c_in: usize },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    Upsample { x: Var, planes: usize, h: usize, w: usize, kh: usize, kw: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Prelu { x: Var, slope: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    GlobalAvgPool { x: Var },
    Reshape { x: Var },
    Narrow { x: Var, start: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Affine { x: Var, scale: T },
    Relu { x: Var },
    Sqrt { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Mse { a: Var, b: Var },
    MseRows { a: Var, b: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Linear { .. } => OpKind::Linear,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Affine { .. } => OpKind::Affine,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sqrt { .. } => OpKind::Sqrt,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Mse { .. } => OpKind::Mse,
            Op::MseRows { .. } => OpKind::MseRows,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    fault: Option<FaultInjection>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(t: &Tensor<impl Real>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(shape_err(op, format!("expected [N,C,H,W], got {:?}", s))),
    }
}

fn sum<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), grad_enabled: true, fault: None }
    }

    /// A graph whose parameters never require gradients.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn with_fault(mut self, fault: FaultInjection) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (never differentiated).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf. Requires grad unless the graph is in inference mode.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(t, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient accumulated into `v` by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.value(x), "conv2d")?;
        let (k, wc, kh, kw) = dims4(self.value(w), "conv2d")?;
        if wc != c {
            return Err(shape_err("conv2d", format!("input channels {} vs weight channels {}", c, wc)));
        }
        if let Some(b) = b {
            if self.value(b).len() != k {
                return Err(shape_err("conv2d", format!("bias length {} vs {} filters", self.value(b).len(), k)));
            }
        }
        let geom = ConvGeom { c, h, w: wd, kh, kw, sh: stride.0, sw: stride.1, ph: padding.0, pw: padding.1 };
        if !geom.fits() {
            return Err(shape_err("conv2d", format!("kernel {}x{} exceeds padded input {}x{}", kh, kw, h, wd)));
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            k,
        );
        let t = Tensor::new(vec![n, k, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, k }, rg))
    }

    /// Transposed convolution with weight `[c_in, c_out, kh, kw]`; output
    /// size `(h-1)·s − 2p + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (n, c_in, h, wd) = dims4(self.value(x), "conv_transpose2d")?;
        let (wc, c_out, kh, kw) = dims4(self.value(w), "conv_transpose2d")?;
        if wc != c_in {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input channels {} vs weight channels {}", c_in, wc),
            ));
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(shape_err("conv_transpose2d", "bias length"));
            }
        }
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        let oh = ((h - 1) * sh + kh)
            .checked_sub(2 * ph)
            .filter(|&v| v > 0)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding too large for height"))?;
        let ow = ((wd - 1) * sw + kw)
            .checked_sub(2 * pw)
            .filter(|&v| v > 0)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding too large for width"))?;
        let geom = ConvGeom { c: c_out, h: oh, w: ow, kh, kw, sh, sw, ph, pw };
        if !geom.fits() || geom.out_h() != h || geom.out_w() != wd {
            return Err(shape_err("conv_transpose2d", "inconsistent geometry"));
        }
        let out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            c_in,
        );
        let t = Tensor::new(vec![n, c_out, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::ConvTranspose2d { x, w, b, geom, c_in }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var, pool: Pool2d) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "max_pool2d")?;
        if pool.kh > h || pool.kw > w || pool.sh == 0 || pool.sw == 0 {
            return Err(shape_err("max_pool2d", format!("kernel {}x{} larger than input {}x{}", pool.kh, pool.kw, h, w)));
        }
        let (out, argmax) = kernels::max_pool_forward(self.value(x).data(), n * c, h, w, &pool);
        let t = Tensor::new(vec![n, c, pool.out_h(h), pool.out_w(w)], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Replication upsampling: every value becomes a `kh×kw` block.
    pub fn upsample(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "upsample_unpool")?;
        if kh == 0 || kw == 0 {
            return Err(shape_err("upsample_unpool", "zero kernel"));
        }
        let out = kernels::upsample_forward(self.value(x).data(), n * c, h, w, kh, kw);
        let t = Tensor::new(vec![n, c, h * kh, w * kw], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Upsample { x, planes: n * c, h, w, kh, kw }, rg))
    }

    /// Per-channel batch normalisation over `(N, H, W)`.
    ///
    /// Train mode normalises with batch statistics and folds them into
    /// `stats` (unbiased variance); eval mode uses `stats` and fails if no
    /// train step has populated them.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "batch_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.mean.len() != c {
            return Err(shape_err("batch_norm", format!("{} channels vs affine/stats length", c)));
        }
        let hw = h * w;
        let m = n * hw;
        let xs = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for s_i in 0..n {
                        s += sum(&xs[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw]);
                    }
                    let mu = s / T::from_f64(m as f64);
                    let mut v = T::zero();
                    for s_i in 0..n {
                        for &val in &xs[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw] {
                            let d = val - mu;
                            v += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v / T::from_f64(m as f64);
                }
                (mean, var)
            }
            Mode::Eval => {
                if stats.tracked == 0 {
                    return Err(Error::UninitializedStats);
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for s_i in 0..n {
            for ch in 0..c {
                let off = (s_i * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        if mode == Mode::Train {
            let unbias = if m > 1 { T::from_f64(m as f64 / (m - 1) as f64) } else { T::one() };
            for ch in 0..c {
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mean[ch];
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * var[ch] * unbias;
            }
            stats.tracked += 1;
        }
        let t = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let train = mode == Mode::Train;
        Ok(self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, rg))
    }

    /// PReLU with one learnable slope per channel (dimension 1).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 || self.value(slope).len() != shape[1] {
            return Err(shape_err("prelu", format!("slope length {} vs shape {:?}", self.value(slope).len(), shape)));
        }
        let inner: usize = shape[2..].iter().product();
        let c = shape[1];
        let a = self.value(slope).data();
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > T::zero() { v } else { a[(i / inner) % c] * v })
            .collect();
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x) || self.rg(slope);
        Ok(self.push(t, Op::Prelu { x, slope }, rg))
    }

    /// `x·W + b` with `x: [N, D]`, `W: [D, M]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, d) = match *self.value(x).shape() {
            [n, d] => (n, d),
            ref s => return Err(shape_err("fully_connected", format!("input must be [N,D], got {:?}", s))),
        };
        let (wd, m) = match *self.value(w).shape() {
            [a, b] => (a, b),
            ref s => return Err(shape_err("fully_connected", format!("weight must be [D,M], got {:?}", s))),
        };
        if wd != d {
            return Err(shape_err("fully_connected", format!("input width {} vs weight rows {}", d, wd)));
        }
        let mut out = vec![T::zero(); n * m];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != m {
                return Err(shape_err("fully_connected", format!("bias length {} vs {}", bias.len(), m)));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        T::gemm(n, d, m, self.value(x).data(), false, self.value(w).data(), false, T::one(), &mut out);
        let t = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "global_avg_pool")?;
        let hw = h * w;
        let denom = T::from_f64(hw as f64);
        let out: Vec<T> = self.value(x).data().chunks(hw).map(|p| sum(p) / denom).collect();
        let t = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GlobalAvgPool { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Rows `start..start+len` of the leading dimension.
    pub fn narrow0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).narrow0(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Narrow { x, start }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    /// `scale·x + shift`, element-wise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).data().iter().map(|&v| scale * v + shift).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data: out };
        let rg = self.rg(x);
        self.push(t, Op::Affine { x, scale }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|&v| v.max(T::zero())).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data: out };
        let rg = self.rg(x);
        self.push(t, Op::Relu { x }, rg)
    }

    /// Element-wise square root. The derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|&v| v.max(T::zero()).sqrt()).collect();
        let t = Tensor { shape: self.value(x).shape().to_vec(), data: out };
        let rg = self.rg(x);
        self.push(t, Op::Sqrt { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(sum(self.value(x).data()));
        let rg = self.rg(x);
        self.push(t, Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let t = Tensor::scalar(sum(self.value(x).data()) / T::from_f64(n as f64));
        let rg = self.rg(x);
        self.push(t, Op::Mean { x }, rg)
    }

    /// Mean squared difference over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mse", "empty input"));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let t = Tensor::scalar(s / T::from_f64(n as f64));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mse { a, b }, rg))
    }

    /// Mean squared difference per leading-dimension row, shape `[N]`.
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_rows")?;
        let n = self.value(a).shape()[0];
        let inner = self.value(a).len() / n.max(1);
        if inner == 0 {
            return Err(shape_err("mse_rows", "empty rows"));
        }
        let out = self
            .value(a)
            .data()
            .chunks(inner)
            .zip(self.value(b).data().chunks(inner))
            .map(|(x, y)| {
                x.iter().zip(y).fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q)) / T::from_f64(inner as f64)
            })
            .collect();
        let t = Tensor::new(vec![n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MseRows { a, b }, rg))
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = match *self.value(logits).shape() {
            [n, c] => (n, c),
            ref s => return Err(shape_err("cross_entropy", format!("logits must be [N,C], got {:?}", s))),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= c) || n == 0 {
            return Err(shape_err("cross_entropy", format!("{} labels for {} rows of {} classes", labels.len(), n, c)));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for (i, row) in self.value(logits).data().chunks(c).enumerate() {
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let z = row.iter().fold(T::zero(), |a, &v| a + (v - mx).exp_());
            let lse = mx + z.ln_();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp_();
            }
            loss += lse - row[labels[i]];
        }
        let t = Tensor::scalar(loss / T::from_f64(n as f64));
        let rg = self.rg(logits);
        Ok(self.push(t, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`, populating gradients of
    /// every node that requires them. Gradients from a previous sweep are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let contribs = self.node_backward(i, &g);
            self.grads[i] = Some(g);
            let negate = self.fault.is_some_and(|f| f.op == self.nodes[i].op.kind());
            for (v, mut d) in contribs {
                if !self.rg(v) {
                    continue;
                }
                if negate {
                    d.iter_mut().for_each(|x| *x = -*x);
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.value(v).data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, k } => {
                let n = self.value(*x).shape()[0];
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(*x), n, geom, val(*w), *k, g, self.rg(*x), self.rg(*w));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom, c_in } => {
                let n = self.value(*x).shape()[0];
                let (dx, dw, db) = kernels::conv_transpose2d_backward(
                    val(*x),
                    n,
                    geom,
                    val(*w),
                    *c_in,
                    g,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    dx[a as usize] += gv;
                }
                out.push((*x, dx));
            }
            Op::Upsample { x, planes, h, w, kh, kw } => {
                out.push((*x, kernels::upsample_backward(g, *planes, *h, *w, *kh, *kw)));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let shape = self.value(*x).shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let gm = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for j in off..off + hw {
                            dbeta[ch] += g[j];
                            dgamma[ch] += g[j] * xhat[j];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let m = T::from_f64((n * hw) as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * hw;
                            let scale = gm[ch] * inv_std[ch];
                            for j in off..off + hw {
                                dx[j] = if *train {
                                    scale * (g[j] - (dbeta[ch] + xhat[j] * dgamma[ch]) / m)
                                } else {
                                    scale * g[j]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Prelu { x, slope } => {
                let shape = self.value(*x).shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let a = val(*slope);
                let xs = val(*x);
                let mut dx = vec![T::zero(); xs.len()];
                let mut da = vec![T::zero(); c];
                for (j, (&xv, &gv)) in xs.iter().zip(g).enumerate() {
                    let ch = (j / inner) % c;
                    if xv > T::zero() {
                        dx[j] = gv;
                    } else {
                        dx[j] = a[ch] * gv;
                        da[ch] += xv * gv;
                    }
                }
                out.push((*x, dx));
                out.push((*slope, da));
            }
            Op::Linear { x, w, b } => {
                let (n, d) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let m = self.value(*w).shape()[1];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(n, m, d, g, false, val(*w), true, T::zero(), &mut dx);
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); d * m];
                    T::gemm(d, n, m, val(*x), true, g, false, T::zero(), &mut dw);
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    out.push((*b, db));
                }
            }
            Op::GlobalAvgPool { x } => {
                let s = self.value(*x).shape();
                let hw = s[2] * s[3];
                let inv = T::one() / T::from_f64(hw as f64);
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &gv in g {
                    dx.extend(core::iter::repeat_n(gv * inv, hw));
                }
                out.push((*x, dx));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::Narrow { x, start } => {
                let xt = self.value(*x);
                let inner = xt.len() / xt.shape()[0].max(1);
                let mut dx = vec![T::zero(); xt.len()];
                dx[start * inner..start * inner + g.len()].copy_from_slice(g);
                out.push((*x, dx));
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Affine { x, scale } => out.push((*x, g.iter().map(|&v| v * *scale).collect())),
            Op::Relu { x } => {
                let dx = val(*x).iter().zip(g).map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                out.push((*x, dx));
            }
            Op::Sqrt { x } => {
                let y = node.value.data();
                let two = T::from_f64(2.0);
                let dx = y
                    .iter()
                    .zip(g)
                    .map(|(&yv, &gv)| if yv > T::zero() { gv / (two * yv) } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            Op::Sum { x } => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::Mean { x } => {
                let n = self.value(*x).len();
                out.push((*x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::Mse { a, b } => {
                let n = self.value(*a).len();
                let k = T::from_f64(2.0) * g[0] / T::from_f64(n as f64);
                let da: Vec<T> = val(*a).iter().zip(val(*b)).map(|(&p, &q)| k * (p - q)).collect();
                out.push((*b, da.iter().map(|&v| -v).collect()));
                out.push((*a, da));
            }
            Op::MseRows { a, b } => {
                let rows = g.len();
                let inner = self.value(*a).len() / rows.max(1);
                let two = T::from_f64(2.0);
                let mut da = Vec::with_capacity(self.value(*a).len());
                for (r, (pa, pb)) in val(*a).chunks(inner).zip(val(*b).chunks(inner)).enumerate() {
                    let k = two * g[r] / T::from_f64(inner as f64);
                    da.extend(pa.iter().zip(pb).map(|(&p, &q)| k * (p - q)));
                }
                out.push((*b, da.iter().map(|&v| -v).collect()));
                out.push((*a, da));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let c = probs.len() / n;
                let k = g[0] / T::from_f64(n as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= T::one();
                }
                d.iter_mut().for_each(|v| *v *= k);
                out.push((*logits, d));
            }
        }
        out
    }
}
