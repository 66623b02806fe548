use alloc::vec::Vec;

use libm::{exp, log1p};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-feature logistic regression on a score; positive iff
/// `weight·x + bias > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub weight: f64,
    pub bias: f64,
    /// Set when the classes were perfectly separated and the midpoint
    /// between the class extremes was used instead of a likelihood fit.
    pub separated: bool,
    pub iterations: usize,
}

impl ThresholdModel {
    /// Score at which the predicted probability crosses 0.5.
    pub fn threshold(&self) -> f64 {
        -self.bias / self.weight
    }

    pub fn probability(&self, x: f64) -> f64 {
        sigmoid(self.weight * x + self.bias)
    }

    pub fn decide(&self, x: f64) -> bool {
        self.weight * x + self.bias > 0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + log1p(exp(-z))
    } else {
        log1p(exp(z))
    }
}

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

/// Maximum-likelihood fit of `P(positive | x)` by damped Newton iterations
/// on standardised scores. Perfectly separated classes fall back to the
/// midpoint between the class extremes.
pub fn fit_threshold(samples: &[(f64, bool)]) -> Result<ThresholdModel> {
    let (pos, neg): (Vec<f64>, Vec<f64>) = {
        let p = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
        let n = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
        (p, n)
    };
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::OneClass);
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::InvalidConfig("non-finite score".into()));
    }
    let fold = |v: &[f64], f: fn(f64, f64) -> f64, init| v.iter().copied().fold(init, f);
    let (pmin, pmax) = (fold(&pos, f64::min, f64::INFINITY), fold(&pos, f64::max, f64::NEG_INFINITY));
    let (nmin, nmax) = (fold(&neg, f64::min, f64::INFINITY), fold(&neg, f64::max, f64::NEG_INFINITY));
    if nmax < pmin || pmax < nmin {
        let (lo, hi, sign) = if nmax < pmin { (nmax, pmin, 1.0) } else { (pmax, nmin, -1.0) };
        let mid = (lo + hi) / 2.0;
        return Ok(ThresholdModel { weight: sign, bias: -sign * mid, separated: true, iterations: 0 });
    }

    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.0 - mean) * (s.0 - mean)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let data: Vec<(f64, f64)> = samples.iter().map(|&(x, y)| ((x - mean) / sd, if y { 1.0 } else { 0.0 })).collect();
    let nll = |w: f64, b: f64| data.iter().map(|&(x, y)| softplus(w * x + b) - y * (w * x + b)).sum::<f64>();

    let (mut w, mut b) = (0.0f64, 0.0f64);
    let mut cur = nll(w, b);
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in &data {
            let p = sigmoid(w * x + b);
            let r = p - y;
            let s = p * (1.0 - p);
            gw += r * x;
            gb += r;
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        if (gw * gw + gb * gb).sqrt() < GRAD_TOL {
            break;
        }
        let det = hww * hbb - hwb * hwb;
        let (dw, db) = if det > 1e-300 {
            ((hbb * gw - hwb * gb) / det, (hww * gb - hwb * gw) / det)
        } else {
            (gw, gb)
        };
        let mut step = 1.0;
        loop {
            let (nw, nb) = (w - step * dw, b - step * db);
            let next = nll(nw, nb);
            if next <= cur || step < 1e-10 {
                w = nw;
                b = nb;
                cur = next;
                break;
            }
            step *= 0.5;
        }
    }
    // undo the standardisation: w·(x − mean)/sd + b
    let weight = w / sd;
    Ok(ThresholdModel { weight, bias: b - weight * mean, separated: false, iterations })
}
