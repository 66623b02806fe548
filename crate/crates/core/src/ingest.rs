//! Raw heart-rate streams and their reduction to 5-minute means.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::date::{Day, DAY_SECS};
use crate::error::{Error, Result};

pub const BIN_SECS: i64 = 300;
pub const BINS_PER_DAY: usize = (DAY_SECS / BIN_SECS) as usize;

/// Samples at or outside these bounds are sensor artifacts and count as
/// missing.
pub const BPM_MIN: f64 = 20.0;
pub const BPM_MAX: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeartRateSample {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub bpm: f64,
}

/// One participant's raw stream over a local-midnight-aligned collection
/// window `[collection_start, collection_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartRateSeries {
    pub participant_id: String,
    pub samples: Vec<HeartRateSample>,
    pub collection_start: i64,
    pub collection_end: i64,
    /// Site offset east of UTC, used for midnight alignment.
    pub utc_offset_minutes: i32,
}

impl HeartRateSeries {
    /// Validates ordering and window membership of the samples.
    pub fn new(
        participant_id: impl Into<String>,
        samples: Vec<HeartRateSample>,
        collection_start: i64,
        collection_end: i64,
        utc_offset_minutes: i32,
    ) -> Result<Self> {
        let s = Self { participant_id: participant_id.into(), samples, collection_start, collection_end, utc_offset_minutes };
        if let Some(w) = s.samples.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::WindowOutOfRange(format!(
                "{}: timestamps not strictly increasing at {}",
                s.participant_id, w[1].timestamp
            )));
        }
        if let (Some(first), Some(last)) = (s.samples.first(), s.samples.last()) {
            if first.timestamp < collection_start || last.timestamp >= collection_end {
                return Err(Error::WindowOutOfRange(format!("{}: samples outside collection window", s.participant_id)));
            }
        }
        Ok(s)
    }

    pub fn start_day(&self) -> Day {
        Day::of_timestamp(self.collection_start, self.utc_offset_minutes)
    }
}

/// One 5-minute bin: mean of the valid samples that fell into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    /// `NaN` when no sample landed in the bin.
    pub value: f64,
    pub count: u32,
}

impl Bin {
    pub const EMPTY: Bin = Bin { value: f64::NAN, count: 0 };

    pub fn imputed(&self) -> bool {
        self.count == 0
    }
}

/// Uniform 5-minute series starting at local midnight.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveMinSeries {
    pub participant_id: String,
    pub start: i64,
    pub utc_offset_minutes: i32,
    pub bins: Vec<Bin>,
}

impl FiveMinSeries {
    pub fn start_day(&self) -> Day {
        Day::of_timestamp(self.start, self.utc_offset_minutes)
    }

    pub fn end(&self) -> i64 {
        self.start + self.bins.len() as i64 * BIN_SECS
    }

    /// Whole days covered.
    pub fn days(&self) -> usize {
        self.bins.len() / BINS_PER_DAY
    }

    /// Bins of day offsets `[from_day, from_day + days)`, if in range.
    pub fn day_range(&self, from_day: i64, days: usize) -> Option<&[Bin]> {
        if from_day < 0 {
            return None;
        }
        let a = from_day as usize * BINS_PER_DAY;
        self.bins.get(a..a + days * BINS_PER_DAY)
    }
}

fn midnight_aligned(ts: i64, offset_minutes: i32) -> bool {
    (ts + offset_minutes as i64 * 60).rem_euclid(DAY_SECS) == 0
}

/// Averages raw samples into 5-minute bins over the collection window.
/// Bins without valid samples carry [`Bin::EMPTY`]; filling them is left to
/// the segment level.
pub fn resample_5min(series: &HeartRateSeries) -> Result<FiveMinSeries> {
    if series.samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let (start, end) = (series.collection_start, series.collection_end);
    if end <= start
        || !midnight_aligned(start, series.utc_offset_minutes)
        || !midnight_aligned(end, series.utc_offset_minutes)
    {
        return Err(Error::MisalignedWindow);
    }
    let n = ((end - start) / BIN_SECS) as usize;
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u32; n];
    for s in &series.samples {
        if !(s.bpm > BPM_MIN && s.bpm < BPM_MAX) || s.timestamp < start || s.timestamp >= end {
            continue;
        }
        let i = ((s.timestamp - start) / BIN_SECS) as usize;
        sums[i] += s.bpm;
        counts[i] += 1;
    }
    let bins = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { Bin::EMPTY } else { Bin { value: s / c as f64, count: c } })
        .collect();
    Ok(FiveMinSeries {
        participant_id: series.participant_id.clone(),
        start,
        utc_offset_minutes: series.utc_offset_minutes,
        bins,
    })
}

/// Fraction of non-imputed bins among the bins starting in `[from, to)`.
pub fn completeness(series: &FiveMinSeries, from: i64, to: i64) -> Result<f64> {
    if from < series.start || to > series.end() || to <= from {
        return Err(Error::WindowOutOfRange(format!(
            "[{from}, {to}) not within [{}, {})",
            series.start,
            series.end()
        )));
    }
    let a = ((from - series.start) / BIN_SECS) as usize;
    let b = ((to - series.start + BIN_SECS - 1) / BIN_SECS) as usize;
    Ok(fraction_present(&series.bins[a..b]))
}

pub(crate) fn fraction_present(bins: &[Bin]) -> f64 {
    if bins.is_empty() {
        return 0.0;
    }
    bins.iter().filter(|b| !b.imputed()).count() as f64 / bins.len() as f64
}
