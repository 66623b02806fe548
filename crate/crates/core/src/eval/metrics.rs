use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Adds one decision for a segment whose true class is `positive`.
    pub fn record(&mut self, positive: bool, predicted: bool) {
        match (positive, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl core::ops::Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metric suite. A metric whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub confusion: Confusion,
    pub uar: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl MetricReport {
    pub fn from_confusion(c: Confusion) -> Self {
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        let precision = ratio(c.tp, c.tp + c.fp);
        let uar = match (sensitivity, specificity) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self { confusion: c, uar, precision, f1, sensitivity, specificity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum the confusion counts, then compute metrics.
    #[default]
    Micro,
    /// Average each metric over the folds where it is defined.
    Macro,
}

/// Combines per-fold reports. Returns `None` for an empty list.
pub fn aggregate(reports: &[MetricReport], how: Aggregation) -> Option<MetricReport> {
    let first = reports.first()?;
    let pooled = reports.iter().skip(1).fold(first.confusion, |a, r| a + r.confusion);
    match how {
        Aggregation::Micro => Some(MetricReport::from_confusion(pooled)),
        Aggregation::Macro => {
            let avg = |f: fn(&MetricReport) -> Option<f64>| {
                let v: Vec<f64> = reports.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            Some(MetricReport {
                confusion: pooled,
                uar: avg(|r| r.uar),
                precision: avg(|r| r.precision),
                f1: avg(|r| r.f1),
                sensitivity: avg(|r| r.sensitivity),
                specificity: avg(|r| r.specificity),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let r = MetricReport::from_confusion(Confusion::new(9, 2, 8, 1));
        assert!((r.sensitivity.unwrap() - 0.9).abs() < 1e-12);
        assert!((r.specificity.unwrap() - 0.8).abs() < 1e-12);
        assert!((r.uar.unwrap() - 0.85).abs() < 1e-12);
        assert!((r.precision.unwrap() - 9.0 / 11.0).abs() < 1e-12);
        assert!((r.f1.unwrap() - 18.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_is_absent() {
        let r = MetricReport::from_confusion(Confusion::new(0, 0, 5, 0));
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.precision, None);
        assert_eq!(r.uar, None);
        assert_eq!(r.specificity, Some(1.0));
        let z = MetricReport::from_confusion(Confusion::new(0, 3, 5, 2));
        assert_eq!(z.f1, None);
    }

    #[test]
    fn pooling() {
        let a = MetricReport::from_confusion(Confusion::new(1, 0, 30, 0));
        let b = MetricReport::from_confusion(Confusion::new(0, 1, 29, 1));
        let p = aggregate(&[a, b], Aggregation::Micro).unwrap();
        assert_eq!(p, MetricReport::from_confusion(Confusion::new(1, 1, 59, 1)));
        assert_eq!(aggregate(&[a], Aggregation::Micro).unwrap(), a);
        assert_eq!(aggregate(&[a, a], Aggregation::Macro).unwrap().uar, a.uar);
        assert_eq!(aggregate(&[], Aggregation::Micro), None);
    }
}
