//! Synthetic heart-rate cohorts with a known illness signature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{cos, floor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{age_band, ManifestEntry, Role};
use crate::date::{Day, DAY_SECS};
use crate::error::{Error, Result};
use crate::ingest::{HeartRateSample, HeartRateSeries, BIN_SECS};
use crate::segment::{far_from_onset, PRE_ONSET_DAYS, SEGMENT_DAYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Anomaly {
    /// Resting-rate elevation while ill, bpm.
    pub delta_bpm: f64,
    /// Day index (from collection start) of symptom onset.
    pub onset_day: u32,
    pub duration_days: u32,
    /// Days over which the elevation rises from 0 to `delta_bpm`.
    pub ramp_days: f64,
}

impl Default for Anomaly {
    fn default() -> Self {
        Self { delta_bpm: 8.0, onset_day: 45, duration_days: 7, ramp_days: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missingness {
    /// Every 5-minute bin is dropped independently.
    #[default]
    Uniform,
    /// Gaps of several consecutive bins.
    Burst { mean_len_bins: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_pretrain: usize,
    pub n_positive: usize,
    pub n_control: usize,
    pub days: u32,
    pub start_date: Day,
    pub base_hr_mean: f64,
    pub base_hr_sd: f64,
    pub circadian_amplitude: f64,
    /// Hour of the circadian trough, local time.
    pub trough_hour: f64,
    /// Per-sample noise sd; samples are clipped to ±3 sd.
    pub noise_sd: f64,
    /// sd of a per-day offset of the resting rate.
    pub daily_sd: f64,
    pub sample_interval_secs: u32,
    /// Fraction of 5-minute bins left without samples.
    pub missing_rate: f64,
    pub missingness: Missingness,
    pub anomaly: Anomaly,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_pretrain: 49,
            n_positive: 19,
            n_control: 19,
            days: 90,
            start_date: Day(18_313),
            base_hr_mean: 65.0,
            base_hr_sd: 8.0,
            circadian_amplitude: 6.0,
            trough_hour: 4.0,
            noise_sd: 2.5,
            daily_sd: 1.5,
            sample_interval_secs: 60,
            missing_rate: 0.02,
            missingness: Missingness::Uniform,
            anomaly: Anomaly::default(),
            seed: 7,
        }
    }
}

/// Sites with their UTC offsets in minutes.
pub const SITES: [(&str, i32); 3] = [("ITA", 60), ("ESP", 60), ("DNK", 60)];

impl GeneratorConfig {
    /// 84-day collections with onset on day 42: every pre-training
    /// participant then yields exactly 30 asymptomatic windows.
    pub fn reference() -> Self {
        Self { days: 84, anomaly: Anomaly { onset_day: 42, ..Anomaly::default() }, ..Self::default() }
    }

    /// Two positive/control pairs and a handful of pre-training participants.
    pub fn tiny() -> Self {
        Self { n_pretrain: 4, n_positive: 2, n_control: 2, ..Self::reference() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        let nonneg = [
            self.base_hr_sd,
            self.circadian_amplitude,
            self.noise_sd,
            self.daily_sd,
            self.missing_rate,
            self.anomaly.delta_bpm,
            self.anomaly.ramp_days,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("rates and amplitudes must be non-negative");
        }
        if self.missing_rate >= 1.0 {
            return bad("missing_rate must be below 1");
        }
        if self.days == 0 || self.anomaly.onset_day + self.anomaly.duration_days > self.days {
            return bad("onset_day + duration_days must not exceed days");
        }
        if self.sample_interval_secs == 0 || DAY_SECS % self.sample_interval_secs as i64 != 0 {
            return bad("sample_interval_secs must divide a day");
        }
        if self.n_control < self.n_positive {
            return bad("every positive participant needs a control");
        }
        if let Missingness::Burst { mean_len_bins: 0 } = self.missingness {
            return bad("burst length must be positive");
        }
        Ok(())
    }

    pub fn participants(&self) -> usize {
        self.n_pretrain + self.n_positive + self.n_control
    }
}

/// Illness window emitted alongside the data: elevated over
/// `[onset, end)` (days).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub participant_id: String,
    pub onset: Day,
    pub end: Day,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub site: String,
    pub offset_minutes: i32,
    pub gender: String,
    pub age: u32,
}

/// Elevation in bpm at `t_days` (fractional days since collection start).
pub fn illness_elevation(a: &Anomaly, t_days: f64) -> f64 {
    let start = a.onset_day as f64;
    let end = start + a.duration_days as f64;
    if t_days < start || t_days >= end {
        return 0.0;
    }
    if a.ramp_days > 0.0 && t_days < start + a.ramp_days {
        a.delta_bpm * (t_days - start) / a.ramp_days
    } else {
        a.delta_bpm
    }
}

fn participant_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn demographics(rng: &mut ChaCha8Rng) -> Demographics {
    let (site, offset) = SITES[rng.random_range(0..SITES.len())];
    let gender = if rng.random_bool(0.7) { "M" } else { "F" };
    Demographics { site: site.into(), offset_minutes: offset, gender: gender.into(), age: rng.random_range(23..=73) }
}

fn participant_id(role: Role, k: usize) -> String {
    match role {
        Role::Pretrain => format!("pre{k:03}"),
        Role::Positive => format!("pos{k:03}"),
        Role::Control => format!("ctl{k:03}"),
    }
}

/// One participant's raw stream. `index` selects the participant-specific
/// random stream, so participants can be generated in any order.
pub fn generate_participant(
    cfg: &GeneratorConfig,
    role: Role,
    index: usize,
    id: &str,
    demo: &Demographics,
) -> Result<(HeartRateSeries, ManifestEntry, Option<GroundTruth>)> {
    cfg.validate()?;
    let mut rng = participant_rng(cfg.seed, index);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(format!("{e}")));
    let base = cfg.base_hr_mean + normal(cfg.base_hr_sd)?.sample(&mut rng);
    let daily = normal(cfg.daily_sd)?;
    let offsets: Vec<f64> = (0..cfg.days).map(|_| daily.sample(&mut rng)).collect();
    let noise = normal(cfg.noise_sd)?;
    let ill = role != Role::Control;

    let bins = cfg.days as usize * (DAY_SECS / BIN_SECS) as usize;
    let dropped = drop_mask(cfg, bins, &mut rng);
    let start = cfg.start_date.midnight_utc(demo.offset_minutes);
    let step = cfg.sample_interval_secs as i64;
    let mut samples = Vec::with_capacity((cfg.days as i64 * DAY_SECS / step) as usize);
    let clip = 3.0 * cfg.noise_sd;
    for k in 0..cfg.days as i64 * DAY_SECS / step {
        let t = k * step;
        let e = noise.sample(&mut rng).clamp(-clip, clip);
        if dropped[(t / BIN_SECS) as usize] {
            continue;
        }
        let day = t as f64 / DAY_SECS as f64;
        let hour = (t % DAY_SECS) as f64 / 3600.0;
        let circ = -cfg.circadian_amplitude * cos(2.0 * core::f64::consts::PI * (hour - cfg.trough_hour) / 24.0);
        let elev = if ill { illness_elevation(&cfg.anomaly, day) } else { 0.0 };
        let bpm = base + offsets[floor(day) as usize] + circ + elev + e;
        samples.push(HeartRateSample { timestamp: start + t, bpm });
    }
    let end = start + cfg.days as i64 * DAY_SECS;
    if ill && cfg.anomaly.delta_bpm > 3.0 * cfg.noise_sd {
        check_separation(cfg, &samples, start)?;
    }
    let series = HeartRateSeries::new(id, samples, start, end, demo.offset_minutes)?;
    let onset = ill.then(|| cfg.start_date.plus(cfg.anomaly.onset_day as i64));
    let entry = ManifestEntry {
        participant_id: id.into(),
        site: demo.site.clone(),
        gender: demo.gender.clone(),
        age_band: age_band(demo.age).into(),
        timezone_offset_minutes: demo.offset_minutes,
        onset_date: onset,
        group: role,
    };
    let truth = onset.map(|o| GroundTruth {
        participant_id: id.into(),
        onset: o,
        end: o.plus(cfg.anomaly.duration_days as i64),
    });
    Ok((series, entry, truth))
}

/// Symptomatic window mean must exceed every asymptomatic window mean.
fn check_separation(cfg: &GeneratorConfig, samples: &[HeartRateSample], start: i64) -> Result<()> {
    let days = cfg.days as usize;
    let mut sums = alloc::vec![(0.0f64, 0usize); days];
    for s in samples {
        let d = ((s.timestamp - start) / DAY_SECS) as usize;
        sums[d].0 += s.bpm;
        sums[d].1 += 1;
    }
    let mean = |from: i64| {
        let (a, n) = sums[from as usize..from as usize + SEGMENT_DAYS].iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        a / n.max(1) as f64
    };
    let onset = cfg.anomaly.onset_day as i64;
    let sym_start = onset - PRE_ONSET_DAYS;
    if sym_start < 0 || sym_start as usize + SEGMENT_DAYS > days {
        return Ok(());
    }
    let sym = mean(sym_start);
    for s in 0..=(days as i64 - SEGMENT_DAYS as i64) {
        if far_from_onset(s, onset) && mean(s) >= sym {
            return Err(Error::InvalidConfig(format!(
                "generated symptomatic window does not exceed asymptomatic window at day {s}"
            )));
        }
    }
    Ok(())
}

fn drop_mask(cfg: &GeneratorConfig, bins: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = alloc::vec![false; bins];
    match cfg.missingness {
        Missingness::Uniform => mask.iter_mut().for_each(|m| *m = rng.random_bool(cfg.missing_rate)),
        Missingness::Burst { mean_len_bins } => {
            // gap starts chosen so the expected dropped fraction matches the rate
            let p_start = cfg.missing_rate / mean_len_bins as f64;
            let mut i = 0;
            while i < bins {
                if rng.random_bool(p_start.min(1.0)) {
                    let len = rng.random_range(1..=2 * mean_len_bins as usize - 1);
                    mask[i..(i + len).min(bins)].iter_mut().for_each(|m| *m = true);
                    i += len;
                } else {
                    i += 1;
                }
            }
        }
    }
    mask
}

/// Plan of a cohort: ids, roles and demographics in generation order.
/// Controls copy the site, gender and age of their positive participant.
pub fn cohort_plan(cfg: &GeneratorConfig) -> Result<Vec<(Role, String, Demographics)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut plan = Vec::with_capacity(cfg.participants());
    for k in 0..cfg.n_pretrain {
        plan.push((Role::Pretrain, participant_id(Role::Pretrain, k), demographics(&mut rng)));
    }
    let positives: Vec<Demographics> = (0..cfg.n_positive).map(|_| demographics(&mut rng)).collect();
    for (k, d) in positives.iter().enumerate() {
        plan.push((Role::Positive, participant_id(Role::Positive, k), d.clone()));
    }
    for k in 0..cfg.n_control {
        let d = match positives.get(k) {
            Some(p) => Demographics { age: (p.age as i64 + rng.random_range(-3..=3)).clamp(0, 120) as u32, ..p.clone() },
            None => demographics(&mut rng),
        };
        let d = match positives.get(k) {
            // keep the age band of the positive participant
            Some(p) if age_band(d.age) != age_band(p.age) => p.clone(),
            _ => d,
        };
        plan.push((Role::Control, participant_id(Role::Control, k), d));
    }
    Ok(plan)
}

pub struct Cohort {
    pub series: Vec<HeartRateSeries>,
    pub manifest: Vec<ManifestEntry>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Whole cohort in memory.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<Cohort> {
    let mut out = Cohort { series: Vec::new(), manifest: Vec::new(), ground_truth: Vec::new() };
    for (i, (role, id, demo)) in cohort_plan(cfg)?.iter().enumerate() {
        let (s, e, t) = generate_participant(cfg, *role, i, id, demo)?;
        out.series.push(s);
        out.manifest.push(e);
        out.ground_truth.extend(t);
    }
    Ok(out)
}
