//! End-to-end stages: synthesis, preprocessing, pre-training, the
//! leave-one-pair-out loop and the window-shift scan.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hrcae_core::cohort::{ManifestEntry, Role};
use hrcae_core::eval::{
    aggregate, build_folds, evaluate_fold, fold_sets, leakage, window_scan, Decider, Fold, MetricReport, ScanRow,
    SegmentScore, ThresholdModel,
};
use hrcae_core::ingest::{resample_5min, FiveMinSeries, HeartRateSeries};
use hrcae_core::segment::{
    balance_by_replication, extract_asymptomatic, extract_symptomatic, segment_participant, Provenance, SegmentPolicy,
    SegmentSet,
};
use hrcae_core::synth::{generate_cohort, GeneratorConfig};
use hrcae_core::train::{finetune_seed, fit, Checkpoint, LossKind, Stage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::formats::cache::{self, CacheSummary, ClassCounts};
use crate::formats::cohort::{read_manifest, read_series, series_path, write_ground_truth, write_manifest, write_series};
use crate::formats::reports::{write_results, write_scan, write_training_log, ResultRow};
use crate::formats::{checkpoint, read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCounts {
    pub pretrain: usize,
    pub positive: usize,
    pub control: usize,
    pub samples: usize,
}

/// Generates a cohort and writes its CSV files, manifest and ground truth.
pub fn synth_to_dir(cfg: &GeneratorConfig, dir: &Path) -> Result<SynthCounts> {
    let cohort = generate_cohort(cfg)?;
    for s in &cohort.series {
        write_series(&series_path(dir, &s.participant_id), s)?;
    }
    write_manifest(dir, &cohort.manifest)?;
    write_ground_truth(dir, &cohort.ground_truth)?;
    let count = |r: Role| cohort.manifest.iter().filter(|e| e.group == r).count();
    Ok(SynthCounts {
        pretrain: count(Role::Pretrain),
        positive: count(Role::Positive),
        control: count(Role::Control),
        samples: cohort.series.iter().map(|s| s.samples.len()).sum(),
    })
}

pub fn load_cohort(dir: &Path) -> Result<(Vec<ManifestEntry>, Vec<HeartRateSeries>)> {
    let manifest = read_manifest(dir)?;
    let series = manifest
        .iter()
        .map(|e| read_series(&series_path(dir, &e.participant_id), e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, series))
}

/// Segments and 5-minute series of a whole cohort, keyed by participant.
#[derive(Debug, Clone)]
pub struct CohortData {
    pub manifest: Vec<ManifestEntry>,
    pub segments: BTreeMap<String, SegmentSet>,
    pub series: BTreeMap<String, FiveMinSeries>,
    pub summary: CacheSummary,
}

impl CohortData {
    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.manifest
            .iter()
            .find(|e| e.participant_id == id)
            .ok_or_else(|| Error::Invalid(format!("participant {id} not in manifest")))
    }
}

fn provenance(role: Role) -> Provenance {
    match role {
        Role::Pretrain => Provenance::Pretrain,
        Role::Positive => Provenance::CvPositive,
        Role::Control => Provenance::CvControl,
    }
}

fn candidates(series: &FiveMinSeries, onset: Option<hrcae_core::date::Day>) -> usize {
    let sym = onset.map_or(0, |o| extract_symptomatic(series, o, 0).is_ok() as usize);
    sym + extract_asymptomatic(series, onset).len()
}

/// Resamples and segments every participant of the manifest.
pub fn preprocess_cohort(
    manifest: Vec<ManifestEntry>,
    raw: &[HeartRateSeries],
    policy: &SegmentPolicy,
) -> Result<CohortData> {
    let mut segments = BTreeMap::new();
    let mut series = BTreeMap::new();
    let mut stats: BTreeMap<&str, (usize, usize, Vec<f64>, usize)> = BTreeMap::new();
    for e in &manifest {
        let s = raw
            .iter()
            .find(|s| s.participant_id == e.participant_id)
            .ok_or_else(|| Error::Invalid(format!("no series for participant {}", e.participant_id)))?;
        let five = resample_5min(s)?;
        let mut set = segment_participant(&five, e.onset_date, policy)?;
        set.provenance = provenance(e.group);
        let st = stats.entry(e.group.name()).or_default();
        st.0 += set.symptomatic.len();
        st.1 += set.asymptomatic.len();
        st.2.extend(set.iter().map(|x| x.completeness));
        st.3 += candidates(&five, e.onset_date) - set.len();
        segments.insert(e.participant_id.clone(), set);
        series.insert(e.participant_id.clone(), five);
    }
    let counts = stats
        .into_iter()
        .map(|(subset, (symptomatic, asymptomatic, c, discarded))| ClassCounts {
            subset: subset.into(),
            symptomatic,
            asymptomatic,
            mean_completeness: if c.is_empty() { 0.0 } else { c.iter().sum::<f64>() / c.len() as f64 },
            min_completeness: c.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
            discarded,
        })
        .collect();
    let participants = manifest.iter().map(|e| e.participant_id.clone()).collect();
    Ok(CohortData { manifest, segments, series, summary: CacheSummary { participants, counts } })
}

pub fn write_cache(dir: &Path, data: &CohortData) -> Result<()> {
    for (id, set) in &data.segments {
        cache::write_participant(dir, id, set)?;
    }
    cache::write_summary(dir, &data.summary)
}

/// Loads the cohort and its segments, reusing the cache when it matches the
/// manifest.
pub fn load_preprocessed(cfg: &RunConfig) -> Result<CohortData> {
    let (manifest, raw) = load_cohort(&cfg.paths.data_dir)?;
    let cache_dir = &cfg.paths.cache_dir;
    let ids: Vec<String> = manifest.iter().map(|e| e.participant_id.clone()).collect();
    if let Ok(summary) = cache::read_summary(cache_dir) {
        if summary.participants == ids {
            let mut segments = BTreeMap::new();
            let mut series = BTreeMap::new();
            for (e, s) in manifest.iter().zip(&raw) {
                segments.insert(e.participant_id.clone(), cache::read_participant(cache_dir, &e.participant_id)?);
                series.insert(e.participant_id.clone(), resample_5min(s)?);
            }
            return Ok(CohortData { manifest, segments, series, summary });
        }
    }
    let data = preprocess_cohort(manifest, &raw, &cfg.segment)?;
    write_cache(cache_dir, &data)?;
    Ok(data)
}

/// Objectives other than the contrastive one see a class-balanced set.
pub fn training_set(set: &SegmentSet, loss: LossKind) -> Result<SegmentSet> {
    match loss {
        LossKind::Contrastive(_) => Ok(set.clone()),
        _ => Ok(balance_by_replication(set)?),
    }
}

pub fn pretrain_set(data: &CohortData) -> SegmentSet {
    let mut set = SegmentSet::new(Provenance::Pretrain);
    for e in data.manifest.iter().filter(|e| e.group == Role::Pretrain) {
        if let Some(s) = data.segments.get(&e.participant_id) {
            set.extend(s.clone());
        }
    }
    set
}

pub fn pretrain(data: &CohortData, exp: &Experiment, seed: u64) -> Result<Checkpoint> {
    exp.validate()?;
    let loss = exp.loss();
    let set = training_set(&pretrain_set(data), loss)?;
    Ok(fit(&exp.model, None, &set, &exp.pretrain, loss, seed, Stage::Pretrain)?)
}

pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    finetune_seed(seed).wrapping_add((fold as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D))
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub checkpoint: Checkpoint,
    pub report: MetricReport,
    pub scores: Vec<SegmentScore>,
    pub threshold: Option<ThresholdModel>,
}

/// Fine-tunes the pre-trained model on one fold and evaluates the held-out
/// pair. Refuses to train when a held-out participant owns any training
/// segment.
pub fn run_fold(data: &CohortData, exp: &Experiment, pre: &Checkpoint, fold: &Fold, seed: u64) -> Result<FoldOutcome> {
    let (train, test) = fold_sets(fold, &data.segments)?;
    let pre_owners = data.manifest.iter().filter(|e| e.group == Role::Pretrain).map(|e| e.participant_id.as_str());
    let owners = train.iter().map(|s| s.participant_id.as_str()).chain(pre_owners);
    let ids = leakage(fold, owners);
    if !ids.is_empty() {
        return Err(Error::Leakage { fold: fold.index, ids });
    }
    let loss = exp.loss();
    let s = fold_seed(seed, fold.index);
    let ft = training_set(&train, loss)?;
    let checkpoint = fit(&exp.model, Some(pre), &ft, &exp.finetune, loss, s, Stage::Finetune)?;
    let mut model = checkpoint.restore()?;
    let eval = evaluate_fold(&mut model, exp.eval_mode(), &train, &test, &exp.attr, s)?;
    let threshold = match eval.decider {
        Decider::Threshold(t) => Some(t),
        _ => None,
    };
    Ok(FoldOutcome { fold: fold.clone(), checkpoint, report: eval.report, scores: eval.scores, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoSummary {
    pub family: String,
    pub mode: String,
    pub aggregation: hrcae_core::eval::Aggregation,
    pub folds: usize,
    pub overall: Option<MetricReport>,
    pub per_fold: Vec<MetricReport>,
}

pub struct LosoRun {
    pub pretrained: Checkpoint,
    pub folds: Vec<FoldOutcome>,
    pub summary: LosoSummary,
}

/// Pre-trains once, then runs every fold on a pool of `jobs` threads.
/// Results do not depend on `jobs`.
pub fn run_loso(data: &CohortData, exp: &Experiment, seed: u64, jobs: usize) -> Result<LosoRun> {
    let folds = build_folds(&data.manifest)?;
    let pretrained = pretrain(data, exp, seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<FoldOutcome> =
        pool.install(|| folds.par_iter().map(|f| run_fold(data, exp, &pretrained, f, seed)).collect::<Result<_>>())?;
    let per_fold: Vec<MetricReport> = outcomes.iter().map(|o| o.report).collect();
    let summary = LosoSummary {
        family: exp.model.family.name().into(),
        mode: exp.eval_mode().name().into(),
        aggregation: exp.aggregation,
        folds: outcomes.len(),
        overall: aggregate(&per_fold, exp.aggregation),
        per_fold,
    };
    Ok(LosoRun { pretrained, folds: outcomes, summary })
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold:03}"))
}

pub const PRETRAINED: &str = "pretrained.ckpt";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const THRESHOLD: &str = "threshold.json";
pub const FOLD: &str = "fold.json";

/// Writes checkpoints, thresholds, logs and result tables of a run.
pub fn write_loso(out: &Path, run: &LosoRun) -> Result<()> {
    checkpoint::write(&out.join(PRETRAINED), &run.pretrained)?;
    let mode = run.summary.mode.as_str();
    let mut rows = Vec::new();
    for o in &run.folds {
        let dir = fold_dir(out, o.fold.index);
        checkpoint::write(&dir.join(CHECKPOINT), &o.checkpoint)?;
        write_training_log(&dir.join("training_log.csv"), &o.checkpoint.trace)?;
        write_json(&dir.join(FOLD), &o.fold)?;
        write_json(&dir.join("scores.json"), &o.scores)?;
        if let Some(t) = &o.threshold {
            write_json(&dir.join(THRESHOLD), t)?;
        }
        rows.push(ResultRow::new(o.fold.index, mode, 0, &o.report));
    }
    write_results(&out.join("results.csv"), &rows)?;
    write_json(&out.join("summary.json"), &run.summary)
}

/// Scans one positive participant with the model of the fold that held it
/// out.
pub fn scan_participant(
    data: &CohortData,
    out: &Path,
    participant: &str,
    shifts: &[i32],
) -> Result<Vec<ScanRow>> {
    let entry = data.entry(participant)?;
    let onset = entry
        .onset_date
        .ok_or_else(|| Error::Invalid(format!("participant {participant} has no onset date")))?;
    let fold = build_folds(&data.manifest)?
        .into_iter()
        .find(|f| f.held_out.0 == participant)
        .ok_or_else(|| Error::Invalid(format!("participant {participant} is not a held-out positive")))?;
    let dir = fold_dir(out, fold.index);
    let mut model = checkpoint::read(&dir.join(CHECKPOINT))?.restore()?;
    let threshold: ThresholdModel = read_json(&dir.join(THRESHOLD))?;
    let series = &data.series[participant];
    let rows = window_scan(&mut model, series, onset, &threshold, shifts.iter().copied())?;
    write_scan(&out.join(format!("scan_{participant}.csv")), participant, &rows)?;
    Ok(rows)
}
