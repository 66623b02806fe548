//! Acceptance suite. Every criterion writes one `PASS`/`FAIL` line to
//! stderr (outside the test harness capture) and then asserts.
//!
//! Criteria 6 to 8 share one end-to-end run on the synthetic cohort at the
//! reduced budget pinned below.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hrcae::config::Experiment;
use hrcae::formats::reports::{write_results, ResultRow};
use hrcae::pipeline::{preprocess_cohort, run_loso, CohortData, LosoRun};
use hrcae_core::date::Day;
use hrcae_core::eval::{build_folds, fold_sets, leakage, window_scan, Confusion, MetricReport, ScanOutcome};
use hrcae_core::gradcheck::{run_suite, GradcheckConfig};
use hrcae_core::ingest::{Bin, FiveMinSeries, BINS_PER_DAY};
use hrcae_core::nets::{Cae, CaeConfig, Cnn, CnnConfig, Family, Network};
use hrcae_core::segment::{extract_asymptomatic, SegmentPolicy};
use hrcae_core::synth::{generate_cohort, GeneratorConfig};
use hrcae_core::tensor::{Graph, Mode, Pool2d, Tensor, Var};
use hrcae_core::train::{contrastive, ContrastiveParams, TrainSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_gradients() {
    let t = Instant::now();
    let reports = run_suite(&GradcheckConfig { probes: 50, ..GradcheckConfig::default() }).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op).collect();
    let pass = failed.is_empty() && reports.iter().all(|r| r.probes >= 50) && secs < 120.0;
    let names: Vec<&str> = reports.iter().map(|r| r.op).collect();
    assert!(names.contains(&"rmse_loss") && names.contains(&"contrastive_loss"));
    verdict(
        1,
        pass,
        &format!(
            "{} checks x 50 probes in f64, worst {} at {:.2e}, failed {:?}, {secs:.1}s",
            reports.len(),
            worst.op,
            worst.max_rel_err,
            failed
        ),
    );
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_2_convolution_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut conv_err, mut deconv_err, mut pool_err, mut adj_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut adjoint_cases = 0;
    for _ in 0..100 {
        let (n, c, k) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (kh + rng.random_range(0..5), kw + rng.random_range(0..7));
        let stride = (rng.random_range(1..3), rng.random_range(1..3));
        let pad = (rng.random_range(0..kh), rng.random_range(0..kw));
        let x = rand_vec(&mut rng, n * c * h * w);
        let wt = rand_vec(&mut rng, k * c * kh * kw);
        let b = rand_vec(&mut rng, k);

        let mut g = Graph::<f64>::new();
        let input = |g: &mut Graph<f64>, s: Vec<usize>, v: Vec<f64>| g.input(Tensor::new(s, v).unwrap());
        let xv = input(&mut g, vec![n, c, h, w], x.clone());
        let wv = input(&mut g, vec![k, c, kh, kw], wt.clone());
        let bv = input(&mut g, vec![k], b.clone());
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let (want, oh, ow) = oracle::conv2d(&x, (n, c, h, w), &wt, (k, kh, kw), &b, stride, pad);
        conv_err = conv_err.max(max_abs_diff(g.value(y).data(), &want));

        // transposed convolution of an [n, k, oh, ow] input back to c channels
        let yin = rand_vec(&mut rng, n * k * oh * ow);
        let bc = rand_vec(&mut rng, c);
        let yv = input(&mut g, vec![n, k, oh, ow], yin.clone());
        let bcv = input(&mut g, vec![c], bc.clone());
        let t = g.conv_transpose2d(yv, wv, Some(bcv), stride, pad).unwrap();
        let (want_t, th, tw) = oracle::conv_transpose2d(&yin, (n, k, oh, ow), &wt, (c, kh, kw), &bc, stride, pad);
        assert_eq!(g.value(t).shape(), &[n, c, th, tw]);
        deconv_err = deconv_err.max(max_abs_diff(g.value(t).data(), &want_t));

        if (th, tw) == (h, w) {
            let t0 = g.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
            let y0 = g.conv2d(xv, wv, None, stride, pad).unwrap();
            let lhs = oracle::dot(g.value(y0).data(), &yin);
            let rhs = oracle::dot(&x, g.value(t0).data());
            adj_err = adj_err.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
            adjoint_cases += 1;
        }

        let (pk, ps) = ((rng.random_range(1..=kh), rng.random_range(1..=kw)), (rng.random_range(1..3), rng.random_range(1..3)));
        let p = g.max_pool2d(xv, Pool2d { kh: pk.0, kw: pk.1, sh: ps.0, sw: ps.1 }).unwrap();
        pool_err = pool_err.max(max_abs_diff(g.value(p).data(), &oracle::max_pool(&x, n * c, h, w, pk, ps)));
    }
    let pass = conv_err <= 1e-5 && deconv_err <= 1e-5 && pool_err <= 1e-5 && adj_err <= 1e-4 && adjoint_cases >= 20;
    verdict(
        2,
        pass,
        &format!(
            "100 shapes: conv {conv_err:.1e}, conv_transpose {deconv_err:.1e}, max_pool {pool_err:.1e} abs; \
             adjoint {adj_err:.1e} rel over {adjoint_cases} shapes"
        ),
    );
}

fn maps(n: usize) -> Tensor<f32> {
    let data = (0..n * 24 * 168).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    Tensor::new(vec![n, 1, 24, 168], data).unwrap()
}

#[test]
fn criterion_3_architecture_shapes() {
    let mut bad = Vec::new();
    for depth in 1..=6 {
        let mut cnn = Cnn::<f32>::new(CnnConfig { num_layers: depth, ..CnnConfig::default() }, 0).unwrap();
        let mut g = Graph::inference();
        let b = cnn.bind(&mut g);
        let x = g.input(maps(2));
        let y = cnn.forward(&mut g, &b, x, Mode::Train).unwrap();
        if g.value(y).shape() != [2, 2] {
            bad.push(format!("cnn depth {depth}: {:?}", g.value(y).shape()));
        }
        let mut cae = Cae::<f32>::new(CaeConfig { num_layers: depth, ..CaeConfig::default() }, 0).unwrap();
        let mut g = Graph::inference();
        let b = cae.bind(&mut g);
        let x = g.input(maps(2));
        let (_, r) = cae.forward(&mut g, &b, x, Mode::Train).unwrap();
        if g.value(r).shape() != [2, 1, 24, 168] {
            bad.push(format!("cae depth {depth}: {:?}", g.value(r).shape()));
        }
    }
    let flat = Cae::<f32>::new(CaeConfig::default(), 0).unwrap().flatten_len();
    verdict(3, bad.is_empty() && flat == 1792, &format!("depths 1..6 checked, 4-layer flatten {flat}, mismatches {bad:?}"));
}

#[test]
fn criterion_4_segmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d0 = 18_313;
    let series = |days: usize| FiveMinSeries {
        participant_id: "p".into(),
        start: Day(d0).midnight_utc(60),
        utc_offset_minutes: 60,
        bins: vec![Bin { value: 70.0, count: 1 }; days * BINS_PER_DAY],
    };
    let (mut mismatches, mut gap_violations, mut windows) = (0, 0, 0);
    let mut instances: Vec<(i64, Option<i64>)> = vec![(90, Some(45))];
    while instances.len() < 200 {
        let span = rng.random_range(14..130);
        let onset = rng.random_bool(0.9).then(|| rng.random_range(-10..span + 10));
        instances.push((span, onset));
    }
    for &(span, onset) in &instances {
        let got: Vec<i64> =
            extract_asymptomatic(&series(span as usize), onset.map(|o| Day(d0 + o))).iter().map(|s| s.start_day.0 - d0).collect();
        if got != oracle::asymptomatic_starts(span, onset) {
            mismatches += 1;
        }
        if let Some(o) = onset {
            gap_violations += got.iter().filter(|&&s| oracle::gap((s, s + 14), (o - 7, o + 7)) < 7).count();
        }
        windows += got.len();
    }
    let central = extract_asymptomatic(&series(90), Some(Day(d0 + 45))).len();
    verdict(
        4,
        mismatches == 0 && gap_violations == 0 && central == 36,
        &format!(
            "200 instances ({windows} windows): {mismatches} mismatches, {gap_violations} gap violations, \
             90-day/onset-45 case {central} windows"
        ),
    );
}

fn contrastive_value(ea: f64, es: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let mut input = |v: Vec<f64>| -> Var { g.input(Tensor::new(vec![2, v.len() / 2], v).unwrap()) };
    let base: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
    let xa = input(base.clone());
    let ra = input(base.iter().map(|v| v + ea).collect());
    let xs = input(base.clone());
    let rs = input(base.iter().map(|v| v + es).collect());
    let l = contrastive(&mut g, xa, ra, xs, rs, &ContrastiveParams::default()).unwrap();
    g.value(l).data()[0]
}

#[test]
fn criterion_5_loss() {
    let m = ContrastiveParams::default().margin;
    let perfect = contrastive_value(0.0, 0.0);
    let satisfied = contrastive_value(0.0, m);
    let beyond = contrastive_value(0.0, 2.0 * m);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (ea, es) = (0.05 * i as f64, 0.35 * i as f64);
        worst = worst.max((contrastive_value(ea, es) - (ea + (m - es).max(0.0))).abs());
    }
    let pass = m == 5.0 && perfect == m && satisfied == 0.0 && beyond == 0.0 && worst < 1e-12;
    verdict(
        5,
        pass,
        &format!("m {m}; perfect reconstruction {perfect}; margin met {satisfied}; 20-point grid max error {worst:.1e}"),
    );
}

#[test]
fn criterion_9_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let hi = if rng.random_bool(0.2) { 3 } else { 1000 };
        let (tp, fp, tn, fn_) = (rng.random_range(0..hi), rng.random_range(0..hi), rng.random_range(0..hi), rng.random_range(0..hi));
        let mut c = Confusion::default();
        for (n, truth, pred) in [(tp, true, true), (fp, false, true), (tn, false, false), (fn_, true, false)] {
            (0..n).for_each(|_| c.record(truth, pred));
        }
        let r = MetricReport::from_confusion(c);
        let h = oracle::hand_metrics(tp, fp, tn, fn_);
        let ok = (c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_)
            && close(r.sensitivity, h.sensitivity)
            && close(r.specificity, h.specificity)
            && close(r.precision, h.precision)
            && close(r.uar, h.uar)
            && close(r.f1, h.f1);
        mismatches += !ok as usize;
    }
    let ex = MetricReport::from_confusion(Confusion { tp: 9, fn_: 1, tn: 8, fp: 2 });
    let uar = ex.uar.unwrap();
    verdict(
        9,
        mismatches == 0 && (uar - 0.85).abs() < 1e-12,
        &format!("1000 random confusions, {mismatches} mismatches; (tp 9, fn 1, tn 8, fp 2) uar {uar:.3}"),
    );
}

// ---- end-to-end criteria ----

/// Reduced budget for one CPU core: channel widths divided by 8 and a cap
/// on optimiser steps per epoch, with the epoch counts of the criterion.
const WIDTH_DIVISOR: usize = 8;
const PRETRAIN_EPOCHS: usize = 50;
const PRETRAIN_STEPS: usize = 10;
const FINETUNE_EPOCHS: usize = 30;
const FINETUNE_STEPS: usize = 8;
const SEED: u64 = 2021;

fn experiment(family: Family, layers: usize) -> Experiment {
    let mut e = Experiment::for_family(family, layers);
    e.model.width_divisor = WIDTH_DIVISOR;
    e.pretrain = TrainSchedule { max_epochs: PRETRAIN_EPOCHS, max_steps_per_epoch: Some(PRETRAIN_STEPS), ..TrainSchedule::default() };
    e.finetune = TrainSchedule { max_epochs: FINETUNE_EPOCHS, max_steps_per_epoch: Some(FINETUNE_STEPS), ..TrainSchedule::default() };
    e
}

struct EndToEnd {
    data: CohortData,
    contrastive: LosoRun,
    rmse: LosoRun,
    cnn: LosoRun,
    elapsed: Duration,
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let cohort = generate_cohort(&GeneratorConfig::reference()).unwrap();
        let data = preprocess_cohort(cohort.manifest, &cohort.series, &SegmentPolicy::default()).unwrap();
        let run = |e: Experiment| {
            let s = Instant::now();
            let r = run_loso(&data, &e, SEED, 1).unwrap();
            let o = r.summary.overall.unwrap();
            let line = format!(
                "  {} ({}): uar {:.3} sensitivity {:.3} specificity {:.3} in {:.0}s\n",
                r.summary.family,
                r.summary.mode,
                o.uar.unwrap_or(f64::NAN),
                o.sensitivity.unwrap_or(f64::NAN),
                o.specificity.unwrap_or(f64::NAN),
                s.elapsed().as_secs_f64()
            );
            let _ = std::io::stderr().write_all(line.as_bytes());
            r
        };
        let contrastive = run(experiment(Family::ContrastiveCae, 4));
        let rmse = run(experiment(Family::Cae, 4));
        let cnn = run(experiment(Family::Cnn, 3));
        EndToEnd { data, contrastive, rmse, cnn, elapsed: t.elapsed() }
    })
}

fn uar(r: &LosoRun) -> f64 {
    r.summary.overall.and_then(|o| o.uar).unwrap_or(0.0)
}

#[test]
fn criterion_6_synthetic_detection() {
    let e = end_to_end();
    let c = e.contrastive.summary.overall.unwrap();
    let (u, sens) = (c.uar.unwrap_or(0.0), c.sensitivity.unwrap_or(0.0));
    let (ur, uc) = (uar(&e.rmse), uar(&e.cnn));
    let minutes = e.elapsed.as_secs_f64() / 60.0;
    let pass = u >= 0.90 && sens >= 0.90 && u - ur >= 0.10 && u - uc >= 0.05 && minutes < 60.0;
    verdict(
        6,
        pass,
        &format!(
            "pooled over {} folds: contrastive CAE uar {u:.3} sensitivity {sens:.3}; RMSE CAE uar {ur:.3} \
             (margin {:+.3}, need +0.10); 3-layer CNN uar {uc:.3} (margin {:+.3}, need +0.05); {minutes:.1} min",
            e.contrastive.folds.len(),
            u - ur,
            u - uc
        ),
    );
}

#[test]
fn criterion_7_window_scan() {
    let e = end_to_end();
    let shifts: Vec<i32> = (-6..=7).collect();
    let mut positive = vec![0usize; shifts.len()];
    let mut scored = vec![0usize; shifts.len()];
    for o in &e.contrastive.folds {
        let id = &o.fold.held_out.0;
        let onset = e.data.entry(id).unwrap().onset_date.unwrap();
        let mut model = o.checkpoint.restore().unwrap();
        let rows = window_scan(&mut model, &e.data.series[id], onset, &o.threshold.unwrap(), shifts.iter().copied()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            if let ScanOutcome::Scored { decision, .. } = r.outcome {
                scored[i] += 1;
                positive[i] += decision as usize;
            }
        }
    }
    let rate: Vec<f64> = positive.iter().zip(&scored).map(|(&p, &n)| p as f64 / n.max(1) as f64).collect();
    let at = |s: i32| rate[(s + 6) as usize];
    // illness days inside the window: min(7, 7 + shift) for shift <= 0
    let majority_ok = (-3..=7).all(|s| at(s) >= 0.8);
    let extremes_ok = at(-6) <= 0.2 && at(-5) <= 0.2;
    let trace: Vec<String> = shifts.iter().zip(&rate).map(|(s, r)| format!("{s:+}:{r:.2}")).collect();
    verdict(
        7,
        majority_ok && extremes_ok && scored.iter().all(|&n| n == e.contrastive.folds.len()),
        &format!("positive rate by shift {}; need >=0.80 on -3..+7, <=0.20 on -6/-5", trace.join(" ")),
    );
}

#[test]
fn criterion_8_leakage_and_determinism() {
    let e = end_to_end();
    let folds = build_folds(&e.data.manifest).unwrap();
    let pretrain_ids: Vec<&str> = folds[0].pretrain_ids.iter().map(String::as_str).collect();
    let mut violations = 0;
    for f in &folds {
        let (train, _) = fold_sets(f, &e.data.segments).unwrap();
        let owners = train.iter().map(|s| s.participant_id.as_str()).chain(pretrain_ids.iter().copied());
        violations += leakage(f, owners).len();
    }
    // repeat the cheapest experiment and compare result tables byte for byte
    let dir = tempfile::tempdir().unwrap();
    let table = |run: &LosoRun, name: &str| {
        let rows: Vec<ResultRow> =
            run.folds.iter().map(|o| ResultRow::new(o.fold.index, &run.summary.mode, 0, &o.report)).collect();
        let p = dir.path().join(name);
        write_results(&p, &rows).unwrap();
        std::fs::read(p).unwrap()
    };
    let again = run_loso(&e.data, &experiment(Family::Cnn, 3), SEED, 1).unwrap();
    let identical = table(&e.cnn, "a.csv") == table(&again, "b.csv")
        && e.cnn.folds.iter().zip(&again.folds).all(|(a, b)| a.checkpoint == b.checkpoint && a.scores == b.scores);
    verdict(
        8,
        violations == 0 && identical,
        &format!("{} folds, {violations} leakage violations; repeated 3-layer CNN run bit-identical: {identical}", folds.len()),
    );
}
