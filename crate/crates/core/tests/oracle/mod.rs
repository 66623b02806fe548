//! Independent reference implementations for the property suites. Plain
//! loops over f64, no sharing with the library code paths.
#![allow(dead_code)]

/// Direct convolution. `x`: `[n, c, h, w]`, `wt`: `[k, c, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (k, kh, kw): (usize, usize, usize),
    bias: &[f64],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for f in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[f];
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * sh + u) as isize - ph as isize;
                                let z = (j * sw + v) as isize - pw as isize;
                                if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ch) * h + y as usize) * w + z as usize]
                                    * wt[((f * c + ch) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((b * k + f) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Scatter form of the transposed convolution. `wt`: `[c_in, c_out, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d(
    x: &[f64],
    (n, c_in, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
    bias: &[f64],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * sh + kh - 2 * ph;
    let ow = (w - 1) * sw + kw - 2 * pw;
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            for i in 0..oh * ow {
                out[(b * c_out + o) * oh * ow + i] = bias[o];
            }
        }
        for ci in 0..c_in {
            for i in 0..h {
                for j in 0..w {
                    let xv = x[((b * c_in + ci) * h + i) * w + j];
                    for o in 0..c_out {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * sh + u) as isize - ph as isize;
                                let z = (j * sw + v) as isize - pw as isize;
                                if y < 0 || z < 0 || y >= oh as isize || z >= ow as isize {
                                    continue;
                                }
                                out[((b * c_out + o) * oh + y as usize) * ow + z as usize] +=
                                    xv * wt[((ci * c_out + o) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Max pooling; ties resolve to the first element in row-major order.
pub fn max_pool(x: &[f64], planes: usize, h: usize, w: usize, k: (usize, usize), s: (usize, usize)) -> Vec<f64> {
    let oh = (h - k.0) / s.0 + 1;
    let ow = (w - k.1) / s.1 + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for u in 0..k.0 {
                    for v in 0..k.1 {
                        best = best.max(x[(p * h + i * s.0 + u) * w + j * s.1 + v]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Day gap between two half-open intervals (0 when they overlap).
pub fn gap(a: (i64, i64), b: (i64, i64)) -> i64 {
    (b.0 - a.1).max(a.0 - b.1).max(0)
}

/// Start days of 14-day windows in a `span`-day series that keep at least
/// 7 days from the window `[onset - 7, onset + 7)`.
pub fn asymptomatic_starts(span: i64, onset: Option<i64>) -> Vec<i64> {
    (0..span)
        .filter(|&s| s + 14 <= span)
        .filter(|&s| onset.is_none_or(|o| gap((s, s + 14), (o - 7, o + 7)) >= 7))
        .collect()
}

/// Metric formulas written out from confusion counts.
pub struct HandMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub uar: Option<f64>,
    pub f1: Option<f64>,
}

pub fn hand_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> HandMetrics {
    let ratio = |a: u64, b: u64| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let precision = ratio(tp, tp + fp);
    let uar = match (sensitivity, specificity) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    // undefined without a true positive (precision and recall both zero or undefined)
    let f1 = if tp == 0 { None } else { Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64) };
    HandMetrics { sensitivity, specificity, precision, uar, f1 }
}
