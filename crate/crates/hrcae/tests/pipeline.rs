mod common;

use hrcae::pipeline::{self, preprocess_cohort, run_fold, run_loso, write_loso};
use hrcae::Error;
use hrcae_core::cohort::Role;
use hrcae_core::eval::{build_folds, leakage, ScanOutcome};
use hrcae_core::nets::Family;
use hrcae_core::segment::{Label, SegmentPolicy};
use hrcae_core::train::{evaluate_loss, LossKind};
use hrcae_core::synth::generate_cohort;
use sha2::{Digest, Sha256};

fn data() -> pipeline::CohortData {
    let cfg = common::quick_config(std::path::Path::new("/nonexistent"));
    let c = generate_cohort(&cfg.generator).unwrap();
    preprocess_cohort(c.manifest, &c.series, &SegmentPolicy::default()).unwrap()
}

fn digest(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn preprocessing_counts_windows_per_subset() {
    let d = data();
    let count = |subset: &str| d.summary.counts.iter().find(|c| c.subset == subset).unwrap().clone();
    let pre = count("pretrain");
    // 84-day collections with onset on day 42
    assert_eq!((pre.symptomatic, pre.asymptomatic), (4, 4 * 30));
    assert_eq!(count("control").symptomatic, 0);
    assert_eq!(count("control").asymptomatic, 2 * 71);
    assert!(pre.min_completeness >= 0.70);
}

#[test]
fn folds_hold_out_matched_pairs_without_leakage() {
    let d = data();
    let folds = build_folds(&d.manifest).unwrap();
    assert_eq!(folds.len(), 2);
    for f in &folds {
        let (train, test) = hrcae_core::eval::fold_sets(f, &d.segments).unwrap();
        let owners = train.iter().map(|s| s.participant_id.as_str());
        assert!(leakage(f, owners).is_empty());
        assert!(test.iter().all(|s| f.is_held_out(&s.participant_id)));
        let pos = d.entry(&f.held_out.0).unwrap();
        let ctl = d.entry(&f.held_out.1).unwrap();
        assert_eq!((pos.group, ctl.group), (Role::Positive, Role::Control));
        assert_eq!(pos.matching_key(), ctl.matching_key());
    }
}

#[test]
fn leaked_segment_aborts_the_fold() {
    let mut d = data();
    let exp = common::quick_experiment(Family::ContrastiveCae);
    let fold = build_folds(&d.manifest).unwrap().remove(0);
    let stray = d.segments[&fold.held_out.1].asymptomatic[0].clone();
    d.segments.get_mut(&fold.train_controls[0]).unwrap().asymptomatic.push(stray);
    let pre = pipeline::pretrain(&d, &exp, 1).unwrap();
    match run_fold(&d, &exp, &pre, &fold, 1) {
        Err(Error::Leakage { fold: 0, ids }) => assert_eq!(ids, vec![fold.held_out.1.clone()]),
        other => panic!("expected leakage error, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn runs_are_reproducible_and_independent_of_jobs() {
    let d = data();
    let exp = common::quick_experiment(Family::ContrastiveCae);
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, jobs) in dirs.iter().zip([1, 1, 2]) {
        let run = run_loso(&d, &exp, 42, jobs).unwrap();
        write_loso(dir.path(), &run).unwrap();
    }
    for file in ["results.csv", "summary.json", "pretrained.ckpt", "fold_001/checkpoint.ckpt", "fold_000/scores.json"] {
        let h: Vec<_> = dirs.iter().map(|d| digest(&d.path().join(file))).collect();
        assert_eq!(h[0], h[1], "{file}");
        assert_eq!(h[0], h[2], "{file}");
    }
    let other = tempfile::tempdir().unwrap();
    write_loso(other.path(), &run_loso(&d, &exp, 43, 1).unwrap()).unwrap();
    assert_ne!(digest(&other.path().join("pretrained.ckpt")), digest(&dirs[0].path().join("pretrained.ckpt")));
}

#[test]
fn every_family_and_mode_runs_end_to_end() {
    let d = data();
    let mut latent = common::quick_experiment(Family::ContrastiveCae);
    latent.eval_mode = Some(hrcae_core::eval::EvalMode::LatentMlp);
    latent.attr.schedule.max_epochs = 2;
    for exp in [
        common::quick_experiment(Family::Cae),
        common::quick_experiment(Family::Cnn),
        common::quick_experiment(Family::Mlp),
        latent,
    ] {
        let mut exp = exp;
        exp.model.mlp_hidden = vec![8, 4];
        let run = run_loso(&d, &exp, 3, 1).unwrap();
        assert_eq!(run.folds.len(), 2);
        let overall = run.summary.overall.unwrap();
        // every test segment is decided exactly once
        let total: usize = run.folds.iter().map(|f| f.scores.len()).sum();
        assert_eq!(overall.confusion.total() as usize, total);
        assert_eq!(run.folds.iter().all(|f| f.threshold.is_some()), exp.eval_mode().name() == "recon_error");
    }
}

#[test]
fn scan_skips_shifts_that_lose_the_onset() {
    let d = data();
    let out = tempfile::tempdir().unwrap();
    let exp = common::quick_experiment(Family::ContrastiveCae);
    let run = run_loso(&d, &exp, 5, 1).unwrap();
    write_loso(out.path(), &run).unwrap();
    let shifts: Vec<i32> = (-8..=8).collect();
    let rows = pipeline::scan_participant(&d, out.path(), "pos000", &shifts).unwrap();
    // shift 0 is the canonical symptomatic segment scored by the fold
    let canonical = run.folds[0].scores.iter().find(|s| s.label == Label::Symptomatic).unwrap();
    match rows.iter().find(|r| r.shift == 0).unwrap().outcome {
        ScanOutcome::Scored { recon_error, decision } => {
            assert_eq!(decision, canonical.decision);
            assert!((recon_error - canonical.score).abs() < 1e-9);
        }
        ref o => panic!("shift 0 not scored: {o:?}"),
    }
    for r in &rows {
        let scored = matches!(r.outcome, ScanOutcome::Scored { .. });
        assert_eq!(scored, (-6..=7).contains(&r.shift), "shift {}", r.shift);
    }
    let csv = std::fs::read_to_string(out.path().join("scan_pos000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + shifts.len());
    assert!(pipeline::scan_participant(&d, out.path(), "ctl000", &shifts).is_err());
}

#[test]
fn finetuning_lowers_the_loss_on_its_own_data() {
    let d = data();
    let mut exp = common::quick_experiment(Family::Cae);
    exp.finetune.max_epochs = 5;
    exp.finetune.lr_init = 1e-3;
    let pre = pipeline::pretrain(&d, &exp, 8).unwrap();
    let fold = build_folds(&d.manifest).unwrap().remove(0);
    let (train, _) = hrcae_core::eval::fold_sets(&fold, &d.segments).unwrap();
    let before = evaluate_loss(&mut pre.restore().unwrap(), &train, LossKind::Rmse, 32).unwrap();
    let out = run_fold(&d, &exp, &pre, &fold, 8).unwrap();
    let after = evaluate_loss(&mut out.checkpoint.restore().unwrap(), &train, LossKind::Rmse, 32).unwrap();
    assert!(after <= before, "{after} > {before}");
}
