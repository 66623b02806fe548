//! Result tables: training logs, per-fold metrics, scan traces.

use std::path::Path;

use hrcae_core::eval::{MetricReport, ScanOutcome, ScanRow};
use hrcae_core::train::EpochLog;
use serde::Serialize;

use crate::error::{io_err, Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_training_log(path: &Path, trace: &[EpochLog]) -> Result<()> {
    write_rows(path, trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub fold: usize,
    pub mode: String,
    pub shift: i32,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub uar: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ResultRow {
    pub fn new(fold: usize, mode: &str, shift: i32, r: &MetricReport) -> Self {
        let c = r.confusion;
        Self {
            fold,
            mode: mode.into(),
            shift,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            uar: r.uar,
            precision: r.precision,
            f1: r.f1,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
        }
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Serialize)]
struct ScanCsvRow<'a> {
    participant: &'a str,
    shift: i32,
    recon_error: Option<f64>,
    decision: Option<u8>,
    warning: Option<&'a str>,
}

pub fn write_scan(path: &Path, participant: &str, rows: &[ScanRow]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|r| match &r.outcome {
            ScanOutcome::Scored { recon_error, decision } => ScanCsvRow {
                participant,
                shift: r.shift,
                recon_error: Some(*recon_error),
                decision: Some(*decision as u8),
                warning: None,
            },
            ScanOutcome::Skipped { reason } => {
                ScanCsvRow { participant, shift: r.shift, recon_error: None, decision: None, warning: Some(reason) }
            }
        }),
    )
}
