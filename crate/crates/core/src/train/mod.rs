//! Losses, the Adam training loop and pre-train/fine-tune orchestration.

mod loss;
mod model;

pub use loss::{contrastive, rmse, rmse_per_sample, ContrastiveParams, LossKind};
pub use model::{batch, prepare, Checkpoint, EpochLog, Layout, Model, Stage};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ArchConfig;
use crate::segment::SegmentSet;
use crate::tensor::{AdamConfig, AdamState, Graph, Mode, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub lr_init: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Truncates every epoch after this many optimiser steps.
    pub max_steps_per_epoch: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr_init: 0.03,
            decay_factor: 0.33,
            decay_every: 50,
            lr_floor: 1e-4,
            batch_size: 32,
            max_epochs: 300,
            max_steps_per_epoch: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = (epoch / self.decay_every.max(1)) as i32;
        (self.lr_init * libm::pow(self.decay_factor, k as f64)).max(self.lr_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.decay_every == 0 || !(self.lr_init > 0.0) || self.max_steps_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("bad training schedule".into()));
        }
        Ok(())
    }
}

fn check_family(model: &Model<f32>, loss: &LossKind) -> Result<()> {
    let ok = matches!(
        (model, loss),
        (Model::Cae(_), LossKind::Rmse | LossKind::Contrastive(_)) | (Model::Cnn(_) | Model::Mlp(_), LossKind::CrossEntropy)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::ModeMismatch(alloc::format!("{:?} loss for this network", loss)))
    }
}

/// Runs `schedule.max_epochs` epochs of Adam on `data`, reshuffling every
/// epoch. Contrastive steps draw half a batch from each class; the other
/// objectives shuffle both classes together. Returns the per-epoch trace.
pub fn train(
    model: &mut Model<f32>,
    data: &SegmentSet,
    schedule: &TrainSchedule,
    loss: LossKind,
    seed: u64,
    stage: Stage,
) -> Result<Vec<EpochLog>> {
    train_observed(model, data, schedule, loss, seed, stage, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    model: &mut Model<f32>,
    data: &SegmentSet,
    schedule: &TrainSchedule,
    loss: LossKind,
    seed: u64,
    stage: Stage,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    check_family(model, &loss)?;
    let sym: Vec<Vec<f32>> = data.symptomatic.iter().map(|s| prepare(&s.values)).collect();
    let asym: Vec<Vec<f32>> = data.asymptomatic.iter().map(|s| prepare(&s.values)).collect();
    if let LossKind::Contrastive(p) = loss {
        p.validate()?;
        if sym.is_empty() || asym.is_empty() {
            return Err(Error::MissingClass);
        }
    }
    if sym.is_empty() && asym.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let layout = model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(model.state().params.tensors());
    let mut trace = Vec::with_capacity(schedule.max_epochs);
    for epoch in 0..schedule.max_epochs {
        let lr = schedule.lr(epoch);
        let batches = plan_epoch(sym.len(), asym.len(), &loss, schedule, &mut rng);
        let mut total = 0.0;
        for (sym_idx, asym_idx) in &batches {
            let items: Vec<&[f32]> =
                sym_idx.iter().map(|&i| sym[i].as_slice()).chain(asym_idx.iter().map(|&i| asym[i].as_slice())).collect();
            let mut g = Graph::new();
            let b = model.bind(&mut g);
            let x = g.input(batch(&items, layout)?);
            let l = match loss {
                LossKind::CrossEntropy => {
                    let labels: Vec<usize> = sym_idx.iter().map(|_| 1).chain(asym_idx.iter().map(|_| 0)).collect();
                    let z = model.logits(&mut g, &b, x, Mode::Train)?;
                    g.cross_entropy(z, &labels)?
                }
                LossKind::Rmse => {
                    let (_, r) = model.as_cae()?.forward(&mut g, &b, x, Mode::Train)?;
                    rmse(&mut g, x, r)?
                }
                LossKind::Contrastive(p) => {
                    let (_, r) = model.as_cae()?.forward(&mut g, &b, x, Mode::Train)?;
                    let (ns, na) = (sym_idx.len(), asym_idx.len());
                    let xs = g.narrow0(x, 0, ns)?;
                    let rs = g.narrow0(r, 0, ns)?;
                    let xa = g.narrow0(x, ns, na)?;
                    let ra = g.narrow0(r, ns, na)?;
                    contrastive(&mut g, xa, ra, xs, rs, &p)?
                }
            };
            let v = g.value(l).data()[0].as_f64();
            if !v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += v;
            g.backward(l)?;
            let grads = b.grads(&g);
            adam.step(model.state_mut().params.tensors_mut(), &grads, lr, &schedule.adam)?;
        }
        let log = EpochLog { stage, epoch, lr, loss: total / batches.len().max(1) as f64, steps: batches.len() };
        on_epoch(&log);
        trace.push(log);
    }
    Ok(trace)
}

type Step = (Vec<usize>, Vec<usize>);

/// Index lists `(symptomatic, asymptomatic)` for every step of one epoch.
fn plan_epoch(ns: usize, na: usize, loss: &LossKind, s: &TrainSchedule, rng: &mut ChaCha8Rng) -> Vec<Step> {
    let mut steps = Vec::new();
    if let LossKind::Contrastive(_) = loss {
        let half = s.batch_size / 2;
        let mut ps: Vec<usize> = (0..ns).collect();
        let mut pa: Vec<usize> = (0..na).collect();
        ps.shuffle(rng);
        pa.shuffle(rng);
        let n = ns.max(na).div_ceil(half);
        for i in 0..n {
            let take = |p: &[usize]| (0..half).map(|j| p[(i * half + j) % p.len()]).collect();
            steps.push((take(&ps), take(&pa)));
        }
    } else {
        // symptomatic items are 0..ns, asymptomatic ns..
        let mut all: Vec<usize> = (0..ns + na).collect();
        all.shuffle(rng);
        for chunk in all.chunks(s.batch_size) {
            let sym = chunk.iter().copied().filter(|&i| i < ns).collect();
            let asym = chunk.iter().filter(|&&i| i >= ns).map(|&i| i - ns).collect();
            steps.push((sym, asym));
        }
    }
    if let Some(cap) = s.max_steps_per_epoch {
        steps.truncate(cap);
    }
    steps
}

/// Trains a fresh model (or continues from `init`) with its own optimiser
/// state and schedule.
pub fn fit(
    arch: &ArchConfig,
    init: Option<&Checkpoint>,
    data: &SegmentSet,
    schedule: &TrainSchedule,
    loss: LossKind,
    seed: u64,
    stage: Stage,
) -> Result<Checkpoint> {
    let (mut model, mut trace, init_seed) = match init {
        Some(c) => (c.restore()?, c.trace.clone(), c.seed),
        None => (Model::new(arch, seed)?, Vec::new(), seed),
    };
    trace.extend(train(&mut model, data, schedule, loss, seed, stage)?);
    Ok(Checkpoint::capture(arch, init_seed, &model, trace))
}

/// Pre-trains, then continues on `finetune` with fresh optimiser state and
/// schedule. An empty fine-tune set returns the pre-trained checkpoint.
pub fn pretrain_then_finetune(
    arch: &ArchConfig,
    pretrain: &SegmentSet,
    finetune: &SegmentSet,
    pre_schedule: &TrainSchedule,
    ft_schedule: &TrainSchedule,
    loss: LossKind,
    seed: u64,
) -> Result<Checkpoint> {
    let pre = fit(arch, None, pretrain, pre_schedule, loss, seed, Stage::Pretrain)?;
    if finetune.is_empty() {
        return Ok(pre);
    }
    fit(arch, Some(&pre), finetune, ft_schedule, loss, finetune_seed(seed), Stage::Finetune)
}

/// Shuffling seed for a fine-tuning run derived from the run seed.
pub fn finetune_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Mean loss of `model` on `data` in eval mode, using the same objective
/// and batch composition rules as training (one pass, no shuffling).
pub fn evaluate_loss(model: &mut Model<f32>, data: &SegmentSet, loss: LossKind, batch_size: usize) -> Result<f64> {
    check_family(model, &loss)?;
    let sym: Vec<Vec<f32>> = data.symptomatic.iter().map(|s| prepare(&s.values)).collect();
    let asym: Vec<Vec<f32>> = data.asymptomatic.iter().map(|s| prepare(&s.values)).collect();
    let layout = model.layout();
    let steps: Vec<Step> = match loss {
        LossKind::Contrastive(_) => {
            if sym.is_empty() || asym.is_empty() {
                return Err(Error::MissingClass);
            }
            let half = batch_size / 2;
            let n = sym.len().max(asym.len()).div_ceil(half);
            (0..n)
                .map(|i| {
                    let take = |len: usize| (0..half).map(|j| (i * half + j) % len).collect();
                    (take(sym.len()), take(asym.len()))
                })
                .collect()
        }
        _ => {
            let idx: Vec<usize> = (0..sym.len() + asym.len()).collect();
            idx.chunks(batch_size)
                .map(|c| {
                    (
                        c.iter().copied().filter(|&i| i < sym.len()).collect(),
                        c.iter().filter(|&&i| i >= sym.len()).map(|&i| i - sym.len()).collect(),
                    )
                })
                .collect()
        }
    };
    let mut total = 0.0;
    for (si, ai) in &steps {
        let items: Vec<&[f32]> = si.iter().map(|&i| sym[i].as_slice()).chain(ai.iter().map(|&i| asym[i].as_slice())).collect();
        let mut g = Graph::inference();
        let b = model.bind(&mut g);
        let x = g.input(batch(&items, layout)?);
        let l = match loss {
            LossKind::CrossEntropy => {
                let labels: Vec<usize> = si.iter().map(|_| 1).chain(ai.iter().map(|_| 0)).collect();
                let z = model.logits(&mut g, &b, x, Mode::Eval)?;
                g.cross_entropy(z, &labels)?
            }
            LossKind::Rmse => {
                let (_, r) = model.as_cae()?.forward(&mut g, &b, x, Mode::Eval)?;
                rmse(&mut g, x, r)?
            }
            LossKind::Contrastive(p) => {
                let (_, r) = model.as_cae()?.forward(&mut g, &b, x, Mode::Eval)?;
                let (ns, na) = (si.len(), ai.len());
                let xs = g.narrow0(x, 0, ns)?;
                let rs = g.narrow0(r, 0, ns)?;
                let xa = g.narrow0(x, ns, na)?;
                let ra = g.narrow0(r, ns, na)?;
                contrastive(&mut g, xa, ra, xs, rs, &p)?
            }
        };
        total += g.value(l).data()[0].as_f64();
    }
    Ok(total / steps.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_trace() {
        let s = TrainSchedule::default();
        let expect = [(0, 0.03), (49, 0.03), (50, 0.0099), (100, 0.003267), (150, 0.00107811), (200, 0.000355776)];
        for (e, v) in expect {
            assert!((s.lr(e) - v).abs() < 1e-9, "epoch {e}: {}", s.lr(e));
        }
        assert!((s.lr(250) - 0.03 * 0.33f64.powi(5)).abs() < 1e-15);
        assert_eq!(s.lr(300), 1e-4);
        assert_eq!(s.lr(10_000), 1e-4);
    }

    #[test]
    fn contrastive_batches_are_half_and_half() {
        let s = TrainSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let loss = LossKind::Contrastive(ContrastiveParams::default());
        let steps = plan_epoch(40, 70, &loss, &s, &mut rng);
        assert_eq!(steps.len(), 5);
        assert!(steps.iter().all(|(a, b)| a.len() == 16 && b.len() == 16));
        let covered: alloc::collections::BTreeSet<usize> = steps.iter().flat_map(|(_, a)| a.iter().copied()).collect();
        assert_eq!(covered.len(), 70);
        let capped = TrainSchedule { max_steps_per_epoch: Some(2), ..s.clone() };
        assert_eq!(plan_epoch(40, 70, &loss, &capped, &mut rng).len(), 2);
        let ce = plan_epoch(40, 70, &LossKind::CrossEntropy, &s, &mut rng);
        assert_eq!(ce.len(), 4);
        assert_eq!(ce.iter().map(|(a, b)| a.len() + b.len()).sum::<usize>(), 110);
    }
}
