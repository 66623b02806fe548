//! 14-day segments: extraction around symptom onset, median imputation,
//! class balancing and the 24×168 feature-map layout.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::date::Day;
use crate::error::{Error, Result};
use crate::ingest::{fraction_present, FiveMinSeries, BINS_PER_DAY};

pub const SEGMENT_DAYS: usize = 14;
/// Days before onset covered by a canonical symptomatic segment.
pub const PRE_ONSET_DAYS: i64 = 7;
/// Minimum gap in days between an asymptomatic and a symptomatic window.
pub const MIN_GAP_DAYS: i64 = 7;
pub const SEGMENT_LEN: usize = SEGMENT_DAYS * BINS_PER_DAY;
/// Five-minute bins per feature-map column (2 hours).
pub const MAP_ROWS: usize = 24;
pub const MAP_COLS: usize = SEGMENT_LEN / MAP_ROWS;
pub const DEFAULT_MIN_COMPLETENESS: f64 = 0.70;

/// Affine input scaling applied to every bpm value fed to a network.
pub fn normalize_bpm(bpm: f32) -> f32 {
    (bpm - 40.0) / 80.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Symptomatic,
    Asymptomatic,
}

impl Label {
    /// Class index used by the classifiers (symptomatic = 1).
    pub fn class(self) -> usize {
        match self {
            Label::Symptomatic => 1,
            Label::Asymptomatic => 0,
        }
    }
}

/// 4032 five-minute means over 14 days. Before imputation, missing bins are
/// `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub participant_id: String,
    pub start_day: Day,
    pub values: Vec<f32>,
    pub label: Label,
    pub shift_days: i32,
    /// Fraction of bins that held at least one raw sample.
    pub completeness: f64,
}

impl Segment {
    pub fn is_imputed(&self) -> bool {
        self.values.iter().all(|v| !v.is_nan())
    }

    /// Half-open day interval `[start, end)` relative to the epoch.
    pub fn interval(&self) -> (i64, i64) {
        (self.start_day.0, self.start_day.0 + SEGMENT_DAYS as i64)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

fn window(series: &FiveMinSeries, from_day: i64, label: Label, shift: i32) -> Option<Segment> {
    let bins = series.day_range(from_day, SEGMENT_DAYS)?;
    Some(Segment {
        participant_id: series.participant_id.clone(),
        start_day: series.start_day().plus(from_day),
        values: bins.iter().map(|b| b.value as f32).collect(),
        label,
        shift_days: shift,
        completeness: fraction_present(bins),
    })
}

/// The 14-day window starting at midnight of `onset − 7 + shift` days.
/// A non-zero shift must keep the onset day inside the window.
pub fn extract_symptomatic(series: &FiveMinSeries, onset: Day, shift_days: i32) -> Result<Segment> {
    let shift = shift_days as i64;
    let start = onset.0 - PRE_ONSET_DAYS + shift;
    if !(start <= onset.0 && onset.0 < start + SEGMENT_DAYS as i64) {
        return Err(Error::OnsetNotContained);
    }
    window(series, start - series.start_day().0, Label::Symptomatic, shift_days).ok_or(Error::InsufficientCoverage)
}

/// Shift values for which the onset day stays inside the window.
pub fn valid_shift(shift_days: i32) -> bool {
    shift_days as i64 > -(SEGMENT_DAYS as i64 - PRE_ONSET_DAYS) && shift_days as i64 <= PRE_ONSET_DAYS
}

/// Whether an asymptomatic window starting at day `start` keeps at least
/// [`MIN_GAP_DAYS`] away from the canonical symptomatic window of `onset`.
pub fn far_from_onset(start: i64, onset: i64) -> bool {
    let (sym_start, sym_end) = (onset - PRE_ONSET_DAYS, onset - PRE_ONSET_DAYS + SEGMENT_DAYS as i64);
    start + SEGMENT_DAYS as i64 <= sym_start - MIN_GAP_DAYS || start >= sym_end + MIN_GAP_DAYS
}

/// Every day-stride 14-day window inside the series that keeps clear of the
/// symptomatic window (all in-bounds windows when there is no onset).
pub fn extract_asymptomatic(series: &FiveMinSeries, onset: Option<Day>) -> Vec<Segment> {
    let days = series.days();
    if days < SEGMENT_DAYS {
        return Vec::new();
    }
    let d0 = series.start_day().0;
    (0..=(days - SEGMENT_DAYS) as i64)
        .filter(|&s| onset.is_none_or(|o| far_from_onset(d0 + s, o.0)))
        .filter_map(|s| window(series, s, Label::Asymptomatic, 0))
        .collect()
}

/// Median of the finite values (mean of the two central order statistics
/// for even counts).
pub fn median(values: &[f32]) -> Option<f32> {
    let mut v: Vec<f32> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f32::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32 })
}

/// Replaces every missing bin with the median of the segment's observed
/// values.
pub fn impute_median(segment: &Segment) -> Result<Segment> {
    let fill = median(&segment.values).ok_or(Error::EmptySegment)?;
    let mut out = segment.clone();
    out.values.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = fill);
    Ok(out)
}

/// Identifies the segment a feature map was rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRef {
    pub participant_id: String,
    pub start_day: Day,
    pub label: Label,
    pub shift_days: i32,
}

/// 24×168 image of a segment, stored row-major: pixel `(r, c)` is the
/// `r`-th five-minute bin of the `c`-th two-hour column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub pixels: Vec<f32>,
    pub source: SegmentRef,
}

impl FeatureMap {
    pub fn pixel(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * MAP_COLS + c]
    }

    /// Back to time order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut v = alloc::vec![0.0; SEGMENT_LEN];
        for c in 0..MAP_COLS {
            for r in 0..MAP_ROWS {
                v[c * MAP_ROWS + r] = self.pixels[r * MAP_COLS + c];
            }
        }
        v
    }
}

pub fn to_feature_map(segment: &Segment) -> Result<FeatureMap> {
    if segment.values.len() != SEGMENT_LEN {
        return Err(crate::error::shape_err("to_feature_map", alloc::format!("{} values", segment.values.len())));
    }
    if !segment.is_imputed() {
        return Err(Error::NotImputed);
    }
    let mut pixels = alloc::vec![0.0; SEGMENT_LEN];
    for (i, &v) in segment.values.iter().enumerate() {
        let (c, r) = (i / MAP_ROWS, i % MAP_ROWS);
        pixels[r * MAP_COLS + c] = v;
    }
    Ok(FeatureMap {
        pixels,
        source: SegmentRef {
            participant_id: segment.participant_id.clone(),
            start_day: segment.start_day,
            label: segment.label,
            shift_days: segment.shift_days,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pretrain,
    CvPositive,
    CvControl,
}

/// Labelled segments of one data subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub symptomatic: Vec<Segment>,
    pub asymptomatic: Vec<Segment>,
    pub provenance: Provenance,
}

impl SegmentSet {
    pub fn new(provenance: Provenance) -> Self {
        Self { symptomatic: Vec::new(), asymptomatic: Vec::new(), provenance }
    }

    pub fn is_empty(&self) -> bool {
        self.symptomatic.is_empty() && self.asymptomatic.is_empty()
    }

    pub fn len(&self) -> usize {
        self.symptomatic.len() + self.asymptomatic.len()
    }

    pub fn extend(&mut self, other: SegmentSet) {
        self.symptomatic.extend(other.symptomatic);
        self.asymptomatic.extend(other.asymptomatic);
    }

    pub fn push(&mut self, s: Segment) {
        match s.label {
            Label::Symptomatic => self.symptomatic.push(s),
            Label::Asymptomatic => self.asymptomatic.push(s),
        }
    }

    /// All segments, symptomatic first.
    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.symptomatic.iter().chain(&self.asymptomatic)
    }
}

/// Repeats the symptomatic list cyclically until it is as long as the
/// asymptomatic list.
pub fn balance_by_replication(set: &SegmentSet) -> Result<SegmentSet> {
    if set.symptomatic.is_empty() || set.asymptomatic.is_empty() {
        return Err(Error::CannotBalance);
    }
    let n = set.asymptomatic.len().max(set.symptomatic.len());
    let symptomatic = set.symptomatic.iter().cycle().take(n).cloned().collect();
    Ok(SegmentSet { symptomatic, asymptomatic: set.asymptomatic.clone(), provenance: set.provenance })
}

/// Segmentation policy applied per participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPolicy {
    pub min_completeness: f64,
}

impl Default for SegmentPolicy {
    fn default() -> Self {
        Self { min_completeness: DEFAULT_MIN_COMPLETENESS }
    }
}

/// Canonical symptomatic segment (if any) and all asymptomatic segments of
/// one participant, imputed, with windows below the completeness threshold
/// dropped.
pub fn segment_participant(series: &FiveMinSeries, onset: Option<Day>, policy: &SegmentPolicy) -> Result<SegmentSet> {
    let mut out = SegmentSet::new(Provenance::Pretrain);
    let mut raw = extract_asymptomatic(series, onset);
    if let Some(o) = onset {
        match extract_symptomatic(series, o, 0) {
            Ok(s) => raw.insert(0, s),
            Err(Error::InsufficientCoverage) => {}
            Err(e) => return Err(e),
        }
    }
    for s in raw {
        if s.completeness < policy.min_completeness || s.completeness == 0.0 {
            continue;
        }
        out.push(impute_median(&s)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Bin;
    use alloc::vec;

    fn five_min(days: usize, f: impl Fn(usize) -> Bin) -> FiveMinSeries {
        FiveMinSeries {
            participant_id: "p".into(),
            start: Day(18_313).midnight_utc(0),
            utc_offset_minutes: 0,
            bins: (0..days * BINS_PER_DAY).map(f).collect(),
        }
    }

    fn flat(days: usize) -> FiveMinSeries {
        five_min(days, |i| Bin { value: (i / BINS_PER_DAY) as f64, count: 1 })
    }

    #[test]
    fn symptomatic_window_days() {
        let s = flat(90);
        let onset = Day(18_313 + 45);
        let seg = extract_symptomatic(&s, onset, 0).unwrap();
        assert_eq!(seg.start_day, Day(18_313 + 38));
        assert_eq!(seg.values[0], 38.0);
        assert_eq!(*seg.values.last().unwrap(), 51.0);
        assert_eq!(seg.values.len(), SEGMENT_LEN);
        let m3 = extract_symptomatic(&s, onset, -3).unwrap();
        assert_eq!((m3.values[0], *m3.values.last().unwrap()), (35.0, 48.0));
        assert_eq!(m3.shift_days, -3);
        assert_eq!(extract_symptomatic(&s, onset, 8), Err(Error::OnsetNotContained));
        assert_eq!(extract_symptomatic(&s, onset, -7), Err(Error::OnsetNotContained));
        assert_eq!(extract_symptomatic(&s, Day(18_313 + 3), 0), Err(Error::InsufficientCoverage));
        assert!((-6..=7).all(valid_shift) && !valid_shift(-7) && !valid_shift(8));
    }

    #[test]
    fn asymptomatic_counts() {
        let s = flat(90);
        let w = extract_asymptomatic(&s, Some(Day(18_313 + 45)));
        let starts: Vec<i64> = w.iter().map(|x| x.start_day.0 - 18_313).collect();
        let expect: Vec<i64> = (0..=17).chain(59..=76).collect();
        assert_eq!(starts, expect);
        assert_eq!(extract_asymptomatic(&s, None).len(), 77);
        assert!(extract_asymptomatic(&flat(20), Some(Day(18_313 + 10))).is_empty());
        assert!(extract_asymptomatic(&flat(13), None).is_empty());
        // 84-day collections give 30 windows per participant
        assert_eq!(extract_asymptomatic(&flat(84), Some(Day(18_313 + 45))).len(), 30);
    }

    #[test]
    fn median_imputation() {
        let mut seg = extract_symptomatic(&flat(90), Day(18_313 + 45), 0).unwrap();
        assert_eq!(impute_median(&seg).unwrap(), seg);
        seg.values.iter_mut().for_each(|v| *v = 60.0);
        seg.values[7] = f32::NAN;
        assert_eq!(impute_median(&seg).unwrap().values[7], 60.0);
        seg.values.iter_mut().for_each(|v| *v = f32::NAN);
        seg.values[..4].copy_from_slice(&[80.0, 50.0, 70.0, 60.0]);
        let out = impute_median(&seg).unwrap();
        assert_eq!(out.values[100], 65.0);
        assert!(out.is_imputed());
        seg.values.iter_mut().for_each(|v| *v = f32::NAN);
        assert_eq!(impute_median(&seg), Err(Error::EmptySegment));
    }

    #[test]
    fn feature_map_layout() {
        let mut seg = extract_symptomatic(&flat(90), Day(18_313 + 45), 0).unwrap();
        seg.values.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32);
        let m = to_feature_map(&seg).unwrap();
        assert_eq!(m.pixel(0, 0), 0.0);
        assert_eq!(m.pixel(0, 1), 24.0);
        assert_eq!(m.pixel(5, 3), 77.0);
        assert_eq!(m.flatten(), seg.values);
        seg.values[3] = f32::NAN;
        assert_eq!(to_feature_map(&seg), Err(Error::NotImputed));
    }

    fn seg(id: &str, label: Label) -> Segment {
        Segment {
            participant_id: id.into(),
            start_day: Day(0),
            values: vec![],
            label,
            shift_days: 0,
            completeness: 1.0,
        }
    }

    #[test]
    fn balancing() {
        let mut set = SegmentSet::new(Provenance::Pretrain);
        for i in 0..3 {
            set.push(seg(&alloc::format!("s{}", i + 1), Label::Symptomatic));
        }
        for _ in 0..7 {
            set.push(seg("a", Label::Asymptomatic));
        }
        let b = balance_by_replication(&set).unwrap();
        let ids: Vec<&str> = b.symptomatic.iter().map(|s| s.participant_id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3", "s1", "s2", "s3", "s1"]);
        assert_eq!(b.asymptomatic, set.asymptomatic);

        let mut big = SegmentSet::new(Provenance::Pretrain);
        for i in 0..49 {
            big.push(seg(&alloc::format!("{i}"), Label::Symptomatic));
        }
        for _ in 0..1470 {
            big.push(seg("a", Label::Asymptomatic));
        }
        let b = balance_by_replication(&big).unwrap();
        assert_eq!(b.symptomatic.len(), 1470);
        assert!(b.symptomatic.iter().filter(|s| s.participant_id == "17").count() == 30);

        let mut even = SegmentSet::new(Provenance::Pretrain);
        for _ in 0..5 {
            even.push(seg("s", Label::Symptomatic));
            even.push(seg("a", Label::Asymptomatic));
        }
        assert_eq!(balance_by_replication(&even).unwrap(), even);
        assert_eq!(balance_by_replication(&SegmentSet::new(Provenance::Pretrain)), Err(Error::CannotBalance));
    }

    #[test]
    fn participant_policy_drops_sparse_windows() {
        // days 0..30 observed, the rest empty
        let s = five_min(60, |i| if i < 30 * BINS_PER_DAY { Bin { value: 60.0, count: 1 } } else { Bin::EMPTY });
        let set = segment_participant(&s, None, &SegmentPolicy::default()).unwrap();
        // windows starting at day d have (30-d)/14 completeness for d in 16..30
        let kept: Vec<i64> = set.asymptomatic.iter().map(|x| x.start_day.0 - 18_313).collect();
        let oracle: Vec<i64> = (0..=46).filter(|&d| ((30 - d).clamp(0, 14) as f64 / 14.0) >= 0.70).collect();
        assert_eq!(kept, oracle);
        assert!(set.iter().all(Segment::is_imputed));
    }
}
