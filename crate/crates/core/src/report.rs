//! Training reports and their CSV/JSON forms.
//!
//! CSV columns, in order: `epoch,lr,epoch_seconds,test_rmse,updates`.
//! `test_rmse` is empty when no test set was supplied. The JSON form is the
//! full [`TrainReport`] object carrying `schema_version`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::schedule::ConflictTrace;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "epoch,lr,epoch_seconds,test_rmse,updates";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub epoch_seconds: f64,
    pub test_rmse: Option<f64>,
    pub updates: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scheme: String,
    pub workers: usize,
    pub batch_len: Option<usize>,
    pub columns: Option<usize>,
    pub grid: Option<(usize, usize)>,
    pub devices: Option<usize>,
    pub lookahead: Option<usize>,
    pub k: usize,
    pub precision: String,
    pub seed: u64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub records: Vec<EpochRecord>,
    /// Sum of `epoch_seconds`.
    pub elapsed_seconds: f64,
    pub total_updates: u64,
    pub updates_per_sec: f64,
    pub wait_seconds: f64,
    pub conflict_count: Option<u64>,
}

impl TrainReport {
    pub fn new(metadata: RunMetadata) -> Self {
        TrainReport {
            schema_version: SCHEMA_VERSION,
            metadata,
            records: Vec::new(),
            elapsed_seconds: 0.0,
            total_updates: 0,
            updates_per_sec: 0.0,
            wait_seconds: 0.0,
            conflict_count: None,
        }
    }

    pub fn final_rmse(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_rmse)
    }

    /// Fraction of worker time spent waiting for the scheduler.
    pub fn wait_fraction(&self) -> f64 {
        let busy = self.elapsed_seconds * self.metadata.workers.max(1) as f64;
        if busy > 0.0 {
            self.wait_seconds / busy
        } else {
            0.0
        }
    }

    pub fn absorb_trace(&mut self, trace: &ConflictTrace) {
        self.wait_seconds += trace.wait_seconds;
        *self.conflict_count.get_or_insert(0) += trace.conflict_count;
    }
}

/// `(iterations * samples) / elapsed_seconds`.
pub fn updates_per_sec(iterations: u64, samples: u64, elapsed_seconds: f64) -> Result<f64> {
    if elapsed_seconds.is_nan() || elapsed_seconds <= 0.0 {
        return Err(Error::usage(format!(
            "elapsed time must be positive, got {elapsed_seconds}"
        )));
    }
    Ok((iterations as f64 * samples as f64) / elapsed_seconds)
}

/// Append an epoch; indices must run 0, 1, 2, ...
pub fn record_epoch(report: &mut TrainReport, record: EpochRecord) -> Result<()> {
    let expected = report.records.len();
    if record.epoch != expected {
        return Err(Error::usage(format!(
            "epoch {} recorded out of order; expected {expected}",
            record.epoch
        )));
    }
    report.elapsed_seconds += record.epoch_seconds;
    report.total_updates += record.updates;
    report.updates_per_sec = if report.elapsed_seconds > 0.0 {
        report.total_updates as f64 / report.elapsed_seconds
    } else {
        0.0
    };
    report.records.push(record);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Write `report`; returns the number of bytes produced.
pub fn emit<W: Write>(report: &TrainReport, format: Format, mut sink: W) -> Result<usize> {
    let bytes = match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
            for r in &report.records {
                w.serialize(r).map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(report).map_err(|e| Error::format(e.to_string()))?;
            v.push(b'\n');
            v
        }
    };
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::format(e.to_string())
    }
}

pub fn parse_csv<R: Read>(source: R) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::format(format!("unexpected CSV header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn parse_json<R: Read>(source: R) -> Result<TrainReport> {
    let report: TrainReport = serde_json::from_reader(source).map_err(|e| Error::format(e.to_string()))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::format(format!(
            "unsupported report schema version {}",
            report.schema_version
        )));
    }
    Ok(report)
}

/// Trace rows: `worker,row_band,col_group,start,end`.
pub fn emit_trace_csv<W: Write>(trace: &ConflictTrace, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for e in &trace.events {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
