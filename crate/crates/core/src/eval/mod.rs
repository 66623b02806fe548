//! Leave-one-pair-out evaluation: folds, decision rules, metrics and the
//! window-shift scan.

mod folds;
mod metrics;
mod threshold;

pub use folds::{build_folds, fold_sets, leakage, match_controls, Fold};
pub use metrics::{aggregate, Aggregation, Confusion, MetricReport};
pub use threshold::{fit_threshold, ThresholdModel};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::date::Day;
use crate::error::{Error, Result};
use crate::ingest::FiveMinSeries;
use crate::nets::{AttrClassifier, Network};
use crate::segment::{extract_symptomatic, impute_median, valid_shift, Label, Segment, SegmentSet};
use crate::tensor::{AdamState, Graph, Tensor};
use crate::train::{prepare, Model, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Logistic threshold on the auto-encoder reconstruction error.
    ReconError,
    /// Two-layer classifier fit on the auto-encoder's latent attributes.
    LatentMlp,
    /// Arg-max of a classifier's own logits (CNN or MLP).
    CnnLogits,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::ReconError => "recon_error",
            EvalMode::LatentMlp => "latent_mlp",
            EvalMode::CnnLogits => "cnn_logits",
        }
    }

    pub fn check(self, model: &Model<f32>) -> Result<()> {
        let ok = match self {
            EvalMode::ReconError | EvalMode::LatentMlp => matches!(model, Model::Cae(_)),
            EvalMode::CnnLogits => !matches!(model, Model::Cae(_)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ModeMismatch(self.name().to_string()))
        }
    }
}

/// Decision rule fit on a fold's training data.
#[derive(Debug, Clone)]
pub enum Decider {
    Threshold(ThresholdModel),
    Attr(AttrClassifier<f32>),
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub participant_id: String,
    pub start_day: Day,
    pub label: Label,
    pub shift_days: i32,
    /// Reconstruction error, or the symptomatic logit margin.
    pub score: f64,
    pub decision: bool,
}

#[derive(Debug, Clone)]
pub struct FoldEval {
    pub report: MetricReport,
    pub scores: Vec<SegmentScore>,
    pub decider: Decider,
}

/// Settings for the fold-fit attribute classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttrFit {
    pub hidden: usize,
    pub schedule: TrainSchedule,
}

impl Default for AttrFit {
    fn default() -> Self {
        Self { hidden: 32, schedule: TrainSchedule { max_epochs: 50, lr_init: 1e-3, ..TrainSchedule::default() } }
    }
}

fn inputs(segments: &[Segment]) -> Vec<Vec<f32>> {
    segments.iter().map(|s| prepare(&s.values)).collect()
}

fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Symptomatic items cyclically replicated to the asymptomatic count.
fn balanced<T: Clone>(sym: &[T], asym: &[T]) -> Vec<(T, bool)> {
    let n = sym.len().max(asym.len());
    let mut out: Vec<(T, bool)> = sym.iter().cycle().take(n).map(|s| (s.clone(), true)).collect();
    out.extend(asym.iter().map(|a| (a.clone(), false)));
    out
}

/// Raw per-segment scores for a mode: reconstruction error, or the
/// symptomatic logit margin.
pub fn score(model: &mut Model<f32>, mode: EvalMode, segments: &[Segment]) -> Result<Vec<f64>> {
    mode.check(model)?;
    let x = inputs(segments);
    match mode {
        EvalMode::ReconError => model.recon_errors(&refs(&x)),
        EvalMode::CnnLogits => model.logit_margins(&refs(&x)),
        EvalMode::LatentMlp => Err(Error::ModeMismatch("latent_mlp scores come from the attribute classifier".into())),
    }
}

/// Fits the fold's decision rule on `train` (balanced by replicating the
/// symptomatic items), then scores every segment of `test`.
pub fn evaluate_fold(
    model: &mut Model<f32>,
    mode: EvalMode,
    train: &SegmentSet,
    test: &SegmentSet,
    attr: &AttrFit,
    seed: u64,
) -> Result<FoldEval> {
    mode.check(model)?;
    let test_segs: Vec<Segment> = test.iter().cloned().collect();
    let (decider, scores) = match mode {
        EvalMode::ReconError => {
            let es = score(model, mode, &train.symptomatic)?;
            let ea = score(model, mode, &train.asymptomatic)?;
            let tm = fit_threshold(&balanced(&es, &ea))?;
            let s = score(model, mode, &test_segs)?;
            let d = s.iter().map(|&x| tm.decide(x)).collect::<Vec<_>>();
            (Decider::Threshold(tm), s.into_iter().zip(d).collect::<Vec<_>>())
        }
        EvalMode::CnnLogits => {
            let s = score(model, mode, &test_segs)?;
            (Decider::Logits, s.into_iter().map(|m| (m, m > 0.0)).collect())
        }
        EvalMode::LatentMlp => {
            let zs = model.latents(&refs(&inputs(&train.symptomatic)))?;
            let za = model.latents(&refs(&inputs(&train.asymptomatic)))?;
            let clf = fit_attr_classifier(&zs, &za, attr, seed)?;
            let zt = model.latents(&refs(&inputs(&test_segs)))?;
            let m = attr_margins(&clf, &zt)?;
            (Decider::Attr(clf), m.into_iter().map(|v| (v, v > 0.0)).collect())
        }
    };
    let mut confusion = Confusion::default();
    let scores: Vec<SegmentScore> = test_segs
        .iter()
        .zip(scores)
        .map(|(s, (score, decision))| {
            confusion.record(s.label == Label::Symptomatic, decision);
            SegmentScore {
                participant_id: s.participant_id.clone(),
                start_day: s.start_day,
                label: s.label,
                shift_days: s.shift_days,
                score,
                decision,
            }
        })
        .collect();
    Ok(FoldEval { report: MetricReport::from_confusion(confusion), scores, decider })
}

/// Cross-entropy training of the latent-attribute classifier.
pub fn fit_attr_classifier(sym: &[Vec<f32>], asym: &[Vec<f32>], fit: &AttrFit, seed: u64) -> Result<AttrClassifier<f32>> {
    if sym.is_empty() || asym.is_empty() {
        return Err(Error::OneClass);
    }
    fit.schedule.validate()?;
    let d = sym[0].len();
    let mut clf = AttrClassifier::<f32>::new(d, fit.hidden, seed)?;
    let items = balanced(sym, asym);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(clf.state().params.tensors());
    for epoch in 0..fit.schedule.max_epochs {
        order.shuffle(&mut rng);
        let lr = fit.schedule.lr(epoch);
        let mut chunks: Vec<&[usize]> = order.chunks(fit.schedule.batch_size).collect();
        if let Some(cap) = fit.schedule.max_steps_per_epoch {
            chunks.truncate(cap);
        }
        for chunk in chunks {
            let mut data = Vec::with_capacity(chunk.len() * d);
            chunk.iter().for_each(|&i| data.extend_from_slice(&items[i].0));
            let labels: Vec<usize> = chunk.iter().map(|&i| items[i].1 as usize).collect();
            let mut g = Graph::new();
            let b = clf.bind(&mut g);
            let x = g.input(Tensor::new(alloc::vec![chunk.len(), d], data)?);
            let z = clf.forward(&mut g, &b, x)?;
            let l = g.cross_entropy(z, &labels)?;
            if !g.value(l).data()[0].is_finite() {
                return Err(Error::Diverged { epoch });
            }
            g.backward(l)?;
            let grads = b.grads(&g);
            adam.step(clf.state_mut().params.tensors_mut(), &grads, lr, &fit.schedule.adam)?;
        }
    }
    Ok(clf)
}

/// Symptomatic logit margin of the attribute classifier per latent vector.
pub fn attr_margins(clf: &AttrClassifier<f32>, latents: &[Vec<f32>]) -> Result<Vec<f64>> {
    if latents.is_empty() {
        return Ok(Vec::new());
    }
    let d = clf.input_dim;
    let mut g = Graph::inference();
    let b = clf.bind(&mut g);
    let x = g.input(Tensor::new(alloc::vec![latents.len(), d], latents.concat())?);
    let z = clf.forward(&mut g, &b, x)?;
    Ok(g.value(z).data().chunks(2).map(|r| (r[1] - r[0]) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ScanOutcome {
    Scored { recon_error: f64, decision: bool },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub shift: i32,
    pub outcome: ScanOutcome,
}

/// Slides the symptomatic window by each shift (in days), scoring the
/// reconstruction error and applying `threshold`. Shifts that leave the
/// onset outside the window, or run past the data, become skipped rows.
pub fn window_scan(
    model: &mut Model<f32>,
    series: &FiveMinSeries,
    onset: Day,
    threshold: &ThresholdModel,
    shifts: impl IntoIterator<Item = i32>,
) -> Result<Vec<ScanRow>> {
    EvalMode::ReconError.check(model)?;
    let mut rows = Vec::new();
    for shift in shifts {
        let seg = if valid_shift(shift) {
            extract_symptomatic(series, onset, shift).and_then(|s| impute_median(&s))
        } else {
            Err(Error::OnsetNotContained)
        };
        let outcome = match seg {
            Ok(s) => {
                let e = model.recon_errors(&[&prepare(&s.values)])?[0];
                ScanOutcome::Scored { recon_error: e, decision: threshold.decide(e) }
            }
            Err(e) => ScanOutcome::Skipped { reason: e.to_string() },
        };
        rows.push(ScanRow { shift, outcome });
    }
    Ok(rows)
}
