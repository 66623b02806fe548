//! Central finite-difference checks of every differentiable operator and
//! both training losses, in f64.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{FaultInjection, Graph, Mode, OpKind, Pool2d, RunningStats, Tensor, Var};
use crate::train::{contrastive, rmse, ContrastiveParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub probes: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub fault: Option<FaultInjection>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { probes: 50, eps: 1e-6, tolerance: 1e-3, seed: 0, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One randomly drawn instance: input tensors plus the expression.
struct Instance {
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for operators with a kink at 0.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.5);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.random_bool(0.5) {
            *v = -*v
        }
    });
    t
}

/// Distinct values spaced well beyond the probe step, so pooling windows
/// have a unique maximum.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn instance(op: &str, rng: &mut ChaCha8Rng) -> Instance {
    let (n, c) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (dims(rng, 3, 6), dims(rng, 3, 7));
    let b: Build;
    let inputs: Vec<Tensor<f64>>;
    match op {
        "conv2d" | "conv_transpose2d" => {
            let k = dims(rng, 1, 3);
            let (kh, kw) = (dims(rng, 1, 3), dims(rng, 1, 3));
            let s = (dims(rng, 1, 2), dims(rng, 1, 2));
            let p = (dims(rng, 0, kh / 2), dims(rng, 0, kw / 2));
            if op == "conv2d" {
                inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0), uniform(rng, &[k, c, kh, kw], -1.0, 1.0), uniform(rng, &[k], -1.0, 1.0)];
                b = Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), s, p));
            } else {
                // input sized so the transposed output is at least one pixel
                let (ih, iw) = (dims(rng, 2, 4), dims(rng, 2, 4));
                inputs = vec![uniform(rng, &[n, c, ih, iw], -1.0, 1.0), uniform(rng, &[c, k, kh, kw], -1.0, 1.0), uniform(rng, &[k], -1.0, 1.0)];
                b = Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), s, p));
            }
        }
        "max_pool2d" => {
            let pool = Pool2d { kh: dims(rng, 1, 3), kw: dims(rng, 1, 3), sh: dims(rng, 1, 3), sw: dims(rng, 1, 3) };
            inputs = vec![distinct(rng, &[n, c, h, w])];
            b = Box::new(move |g, v| g.max_pool2d(v[0], pool));
        }
        "upsample_unpool" => {
            let (kh, kw) = (dims(rng, 1, 3), dims(rng, 1, 3));
            inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)];
            b = Box::new(move |g, v| g.upsample(v[0], kh, kw));
        }
        "batch_norm" => {
            inputs = vec![uniform(rng, &[n + 1, c, h, w], -2.0, 2.0), uniform(rng, &[c], 0.5, 1.5), uniform(rng, &[c], -1.0, 1.0)];
            let eval = rng.random_bool(0.3);
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            b = Box::new(move |g, v| {
                let mut st = RunningStats { mean: mean.clone(), var: var.clone(), tracked: 1 };
                let mode = if eval { Mode::Eval } else { Mode::Train };
                g.batch_norm(v[0], v[1], v[2], &mut st, mode, 0.1, 1e-5)
            });
        }
        "prelu" => {
            inputs = vec![off_zero(rng, &[n, c, h, w]), uniform(rng, &[c], 0.05, 0.5)];
            b = Box::new(|g, v| g.prelu(v[0], v[1]));
        }
        "fully_connected" => {
            let (d, m) = (dims(rng, 1, 6), dims(rng, 1, 5));
            inputs = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[d, m], -1.0, 1.0), uniform(rng, &[m], -1.0, 1.0)];
            b = Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])));
        }
        "global_avg_pool" => {
            inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)];
            b = Box::new(|g, v| g.global_avg_pool(v[0]));
        }
        "reshape" => {
            inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)];
            b = Box::new(move |g, v| g.reshape(v[0], &[n, c * h * w]));
        }
        "narrow" => {
            let rows = n + 2;
            let start = dims(rng, 0, rows - 1);
            let len = dims(rng, 1, rows - start);
            inputs = vec![uniform(rng, &[rows, c, w], -1.0, 1.0)];
            b = Box::new(move |g, v| g.narrow0(v[0], start, len));
        }
        "add" | "sub" => {
            inputs = vec![uniform(rng, &[n, c, w], -1.0, 1.0), uniform(rng, &[n, c, w], -1.0, 1.0)];
            b = if op == "add" { Box::new(|g, v| g.add(v[0], v[1])) } else { Box::new(|g, v| g.sub(v[0], v[1])) };
        }
        "affine" => {
            let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
            inputs = vec![uniform(rng, &[n, w], -1.0, 1.0)];
            b = Box::new(move |g, v| Ok(g.affine(v[0], s, t)));
        }
        "relu" => {
            inputs = vec![off_zero(rng, &[n, c, w])];
            b = Box::new(|g, v| Ok(g.relu(v[0])));
        }
        "sqrt" => {
            inputs = vec![uniform(rng, &[n, w], 0.2, 3.0)];
            b = Box::new(|g, v| Ok(g.sqrt(v[0])));
        }
        "sum" | "mean" => {
            inputs = vec![uniform(rng, &[n, c, w], -1.0, 1.0)];
            b = if op == "sum" { Box::new(|g, v| Ok(g.sum(v[0]))) } else { Box::new(|g, v| Ok(g.mean(v[0]))) };
        }
        "mse" | "mse_rows" => {
            inputs = vec![uniform(rng, &[n, c, w], -1.0, 1.0), uniform(rng, &[n, c, w], -1.0, 1.0)];
            b = if op == "mse" { Box::new(|g, v| g.mse(v[0], v[1])) } else { Box::new(|g, v| g.mse_rows(v[0], v[1])) };
        }
        "cross_entropy" => {
            let k = dims(rng, 2, 4);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            inputs = vec![uniform(rng, &[n, k], -3.0, 3.0)];
            b = Box::new(move |g, v| g.cross_entropy(v[0], &labels));
        }
        "rmse_loss" => {
            inputs = vec![uniform(rng, &[n, 1, h, w], -1.0, 1.0), uniform(rng, &[n, 1, h, w], -1.0, 1.0)];
            b = Box::new(|g, v| rmse(g, v[0], v[1]));
        }
        "contrastive_loss" => {
            let shape = [n, 1, h, w];
            inputs = (0..4).map(|_| uniform(rng, &shape, -1.0, 1.0)).collect();
            // margin either above (hinge active) or below the typical error
            let margin = if rng.random_bool(0.5) { 5.0 } else { 0.3 };
            let per_sample = rng.random_bool(0.5);
            b = Box::new(move |g, v| contrastive(g, v[0], v[1], v[2], v[3], &ContrastiveParams { margin, per_sample }));
        }
        _ => unreachable!("unknown op {op}"),
    }
    Instance { inputs, build: b }
}

/// Operators and losses covered by the suite, by name.
pub const CHECKED: [&str; 22] = [
    "conv2d",
    "conv_transpose2d",
    "max_pool2d",
    "upsample_unpool",
    "batch_norm",
    "prelu",
    "fully_connected",
    "global_avg_pool",
    "reshape",
    "narrow",
    "add",
    "sub",
    "affine",
    "relu",
    "sqrt",
    "sum",
    "mean",
    "mse",
    "mse_rows",
    "cross_entropy",
    "rmse_loss",
    "contrastive_loss",
];

/// Scalar objective: the expression itself if scalar, otherwise its mean
/// squared distance to a fixed random target.
fn evaluate(inst: &Instance, target: &Option<Tensor<f64>>, fault: Option<FaultInjection>, with_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    if let Some(f) = fault {
        g = g.with_fault(f);
    }
    let vars: Vec<Var> = inst.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (inst.build)(&mut g, &vars)?;
    let loss = match target {
        Some(t) => {
            let tv = g.input(t.clone());
            g.mse(out, tv)?
        }
        None => out,
    };
    let value = g.value(loss).data()[0];
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let grads =
        vars.iter().zip(&inst.inputs).map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()])).collect();
    Ok((value, grads))
}

/// Checks one operator at `cfg.probes` random coordinates, each on a freshly
/// drawn instance.
pub fn check_op(op: &'static str, cfg: &GradcheckConfig) -> Result<OpReport> {
    let salt = op.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let mut max_rel = 0.0f64;
    for _ in 0..cfg.probes {
        let mut inst = instance(op, &mut rng);
        let probe = {
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = inst.inputs.iter().map(|t| g.param(t.clone())).collect();
            let out = (inst.build)(&mut g, &vars)?;
            let shape = g.value(out).shape().to_vec();
            (g.value(out).len() > 1).then(|| uniform(&mut rng, &shape, -1.0, 1.0))
        };
        let (_, grads) = evaluate(&inst, &probe, cfg.fault, true)?;
        let which = rng.random_range(0..inst.inputs.len());
        let idx = rng.random_range(0..inst.inputs[which].len());
        let orig = inst.inputs[which].data()[idx];
        inst.inputs[which].data_mut()[idx] = orig + cfg.eps;
        let (up, _) = evaluate(&inst, &probe, None, false)?;
        inst.inputs[which].data_mut()[idx] = orig - cfg.eps;
        let (down, _) = evaluate(&inst, &probe, None, false)?;
        let numeric = (up - down) / (2.0 * cfg.eps);
        let analytic = grads[which][idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(OpReport { op, probes: cfg.probes, max_rel_err: max_rel, passed: max_rel < cfg.tolerance })
}

/// Runs the whole suite.
pub fn run_suite(cfg: &GradcheckConfig) -> Result<Vec<OpReport>> {
    CHECKED.iter().map(|op| check_op(op, cfg)).collect()
}

/// Graph operator a suite entry exercises, for fault injection.
pub fn op_kind(name: &str) -> Option<OpKind> {
    use OpKind::*;
    [
        Conv2d, ConvTranspose2d, MaxPool2d, Upsample, BatchNorm, Prelu, Linear, GlobalAvgPool, Reshape, Narrow, Add, Sub,
        Affine, Relu, Sqrt, Sum, Mean, Mse, MseRows, CrossEntropy,
    ]
    .into_iter()
    .find(|k| k.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let cfg = GradcheckConfig { probes: 20, ..GradcheckConfig::default() };
        for r in run_suite(&cfg).unwrap() {
            assert!(r.passed, "{} max rel err {}", r.op, r.max_rel_err);
        }
    }

    #[test]
    fn flipped_conv_backward_is_caught() {
        let cfg = GradcheckConfig { probes: 10, fault: Some(FaultInjection { op: OpKind::Conv2d }), ..Default::default() };
        assert!(!check_op("conv2d", &cfg).unwrap().passed);
        assert!(check_op("prelu", &cfg).unwrap().passed);
        assert_eq!(op_kind("conv2d"), Some(OpKind::Conv2d));
        assert_eq!(op_kind("rmse_loss"), None);
    }
}
