//! Per-participant `timestamp,bpm` CSV files and the cohort manifest.

use std::path::{Path, PathBuf};

use hrcae_core::cohort::ManifestEntry;
use hrcae_core::date::{Day, DAY_SECS};
use hrcae_core::ingest::{HeartRateSample, HeartRateSeries};
use hrcae_core::synth::GroundTruth;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{io_err, Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    timestamp: i64,
    bpm: f64,
}

pub fn series_path(dir: &Path, participant_id: &str) -> PathBuf {
    dir.join(format!("{participant_id}.csv"))
}

pub fn write_series(path: &Path, series: &HeartRateSeries) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in &series.samples {
        w.serialize(Row { timestamp: s.timestamp, bpm: s.bpm }).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one participant's stream. The collection window runs from local
/// midnight of the first sample's day to local midnight after the last
/// sample's day.
pub fn read_series(path: &Path, entry: &ManifestEntry) -> Result<HeartRateSeries> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut samples = Vec::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(csv_err)?;
        samples.push(HeartRateSample { timestamp: row.timestamp, bpm: row.bpm });
    }
    let off = entry.timezone_offset_minutes;
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.timestamp, b.timestamp),
        _ => return Err(hrcae_core::Error::NoSamples.into()),
    };
    let start = Day::of_timestamp(first, off).midnight_utc(off);
    let end = Day::of_timestamp(last, off).plus(1).midnight_utc(off);
    debug_assert_eq!((end - start) % DAY_SECS, 0);
    Ok(HeartRateSeries::new(entry.participant_id.clone(), samples, start, end, off)?)
}

pub fn write_manifest(dir: &Path, manifest: &[ManifestEntry]) -> Result<()> {
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Invalid(format!("no {MANIFEST} in {}", dir.display())));
    }
    read_json(&path)
}

pub fn write_ground_truth(dir: &Path, truth: &[GroundTruth]) -> Result<()> {
    write_json(&dir.join(GROUND_TRUTH), &truth)
}

pub fn read_ground_truth(dir: &Path) -> Result<Vec<GroundTruth>> {
    read_json(&dir.join(GROUND_TRUTH))
}
