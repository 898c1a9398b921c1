use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::error::Result;
use crate::metrics::{csv_err, csv_writer};

pub const TRACE_HEADER: [&str; 7] = ["band", "iter", "phase", "beta", "loss_spectral", "loss_spatial", "loss_ratio"];

/// One tuning iteration, evaluated before its parameter update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub band: usize,
    pub iter: usize,
    pub phase: Phase,
    /// Weight actually applied (0 while OFF).
    pub beta: f64,
    pub loss_spectral: f64,
    pub loss_spatial: f64,
    pub loss_ratio: f64,
    pub n_b: usize,
    pub n_bs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub records: Vec<TraceRecord>,
}

impl TuneTrace {
    pub fn band(&self, b: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.band == b)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(TRACE_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.band.to_string(),
                r.iter.to_string(),
                r.phase.as_str().to_string(),
                r.beta.to_string(),
                r.loss_spectral.to_string(),
                r.loss_spatial.to_string(),
                r.loss_ratio.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
