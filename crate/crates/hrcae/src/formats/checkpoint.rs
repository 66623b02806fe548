//! Checkpoint files: magic `FBCAE1`, a `u32` LE header length, a JSON
//! header (architecture, seed, loss trace, tensor table), then all tensors
//! and batch-norm statistics as LE `f32`. Offsets count `f32` values from
//! the start of the data section.

use std::path::Path;

use hrcae_core::nets::{ArchConfig, ModelState};
use hrcae_core::tensor::{RunningStats, Tensor};
use hrcae_core::train::{Checkpoint, EpochLog};
use serde::{Deserialize, Serialize};

use super::write_bytes;
use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 6] = b"FBCAE1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    channels: usize,
    tracked: u64,
    mean_offset: usize,
    var_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    seed: u64,
    trace: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
    stats: Vec<StatsEntry>,
    values: usize,
}

pub fn encode(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut data: Vec<f32> = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in c.state.params.names().iter().zip(c.state.params.tensors()) {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset: data.len() });
        data.extend_from_slice(t.data());
    }
    let mut stats = Vec::new();
    for (name, s) in &c.state.stats {
        let mean_offset = data.len();
        data.extend_from_slice(&s.mean);
        let var_offset = data.len();
        data.extend_from_slice(&s.var);
        stats.push(StatsEntry { name: name.clone(), channels: s.mean.len(), tracked: s.tracked, mean_offset, var_offset });
    }
    let header = Header { arch: c.arch.clone(), seed: c.seed, trace: c.trace.clone(), tensors, stats, values: data.len() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(10 + json.len() + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    if bytes.get(..6) != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let n = u32::from_le_bytes(bytes.get(6..10).ok_or_else(|| bad("truncated".into()))?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(bytes.get(10..10 + n).ok_or_else(|| bad("truncated header".into()))?).map_err(|e| bad(e.to_string()))?;
    let body = &bytes[10 + n..];
    if body.len() != header.values * 4 {
        return Err(bad(format!("expected {} values, found {} bytes", header.values, body.len())));
    }
    let data: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let slice = |off: usize, len: usize| data.get(off..off + len).map(<[f32]>::to_vec).ok_or_else(|| bad("offset out of range".into()));
    let mut state = ModelState::<f32>::new();
    for t in &header.tensors {
        let len = t.shape.iter().product();
        state.params.add(&t.name, Tensor::new(t.shape.clone(), slice(t.offset, len)?)?);
    }
    for s in &header.stats {
        let i = state.add_stats(&s.name, s.channels);
        state.stats[i].1 =
            RunningStats { mean: slice(s.mean_offset, s.channels)?, var: slice(s.var_offset, s.channels)?, tracked: s.tracked };
    }
    Ok(Checkpoint { arch: header.arch, seed: header.seed, state, trace: header.trace })
}

pub fn write(path: &Path, c: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode(c)?)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(path, &bytes)
}
