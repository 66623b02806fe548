//! Segment cache: one binary file per participant.
//!
//! Layout: `u32` LE length of a JSON index, the index itself, then one
//! record of 4032 LE `f32` values per indexed segment.

use std::path::{Path, PathBuf};

use hrcae_core::date::Day;
use hrcae_core::segment::{Label, Provenance, Segment, SegmentSet, SEGMENT_LEN};
use serde::{Deserialize, Serialize};

use super::{read_json, write_bytes, write_json};
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIndex {
    pub start_day: Day,
    pub label: Label,
    pub shift_days: i32,
    pub completeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantIndex {
    pub participant_id: String,
    pub provenance: Provenance,
    pub records: Vec<RecordIndex>,
}

/// Summary written next to the per-participant files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub participants: Vec<String>,
    pub counts: Vec<ClassCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub subset: String,
    pub symptomatic: usize,
    pub asymptomatic: usize,
    pub mean_completeness: f64,
    pub min_completeness: f64,
    pub discarded: usize,
}

pub const SUMMARY: &str = "index.json";

pub fn segment_path(dir: &Path, participant_id: &str) -> PathBuf {
    dir.join(format!("{participant_id}.seg"))
}

pub fn encode(participant_id: &str, set: &SegmentSet) -> Result<Vec<u8>> {
    let index = ParticipantIndex {
        participant_id: participant_id.into(),
        provenance: set.provenance,
        records: set
            .iter()
            .map(|s| RecordIndex { start_day: s.start_day, label: s.label, shift_days: s.shift_days, completeness: s.completeness })
            .collect(),
    };
    let json = serde_json::to_vec(&index).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(4 + json.len() + set.len() * SEGMENT_LEN * 4);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in set.iter() {
        if s.values.len() != SEGMENT_LEN {
            return Err(Error::Invalid(format!("segment of {} values", s.values.len())));
        }
        s.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<SegmentSet> {
    let bad = |detail: &str| Error::Format { path: path.to_path_buf(), detail: detail.into() };
    let n = u32::from_le_bytes(bytes.get(..4).ok_or_else(|| bad("truncated header"))?.try_into().unwrap()) as usize;
    let json = bytes.get(4..4 + n).ok_or_else(|| bad("truncated index"))?;
    let index: ParticipantIndex = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[4 + n..];
    if body.len() != index.records.len() * SEGMENT_LEN * 4 {
        return Err(bad("record section length does not match the index"));
    }
    let mut set = SegmentSet::new(index.provenance);
    for (r, chunk) in index.records.iter().zip(body.chunks_exact(SEGMENT_LEN * 4)) {
        set.push(Segment {
            participant_id: index.participant_id.clone(),
            start_day: r.start_day,
            values: chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
            label: r.label,
            shift_days: r.shift_days,
            completeness: r.completeness,
        });
    }
    Ok(set)
}

pub fn write_participant(dir: &Path, participant_id: &str, set: &SegmentSet) -> Result<()> {
    write_bytes(&segment_path(dir, participant_id), &encode(participant_id, set)?)
}

pub fn read_participant(dir: &Path, participant_id: &str) -> Result<SegmentSet> {
    let path = segment_path(dir, participant_id);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    decode(&path, &bytes)
}

pub fn write_summary(dir: &Path, s: &CacheSummary) -> Result<()> {
    write_json(&dir.join(SUMMARY), s)
}

pub fn read_summary(dir: &Path) -> Result<CacheSummary> {
    read_json(&dir.join(SUMMARY))
}
