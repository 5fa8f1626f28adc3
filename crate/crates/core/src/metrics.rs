//! Per-(round, cluster) metrics table.
//!
//! The file starts with a `#schema=metrics/v1` line followed by a CSV
//! header, and is written even when there are no rows.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::diagnostics::Stage;
use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "#schema=metrics/v1";

pub const METRICS_HEADER: [&str; 27] = [
    "round",
    "cluster",
    "K",
    "b",
    "seed",
    "replay",
    "ucr",
    "loss_mean",
    "td_abs_mean",
    "ker",
    "ktc",
    "diag_valid",
    "key_fraction_buffer",
    "key_fraction_top",
    "success_rate",
    "evaluated",
    "stage",
    "energy_fly",
    "energy_train",
    "energy_comm",
    "energy_agg",
    "energy_total",
    "energy_unmet",
    "buffer_len",
    "new_transitions",
    "hazard_failures",
    "ch",
];

/// One row per (round, cluster). Energy columns are cumulative for the
/// cluster's members. `success_rate` is the latest evaluation of the
/// global model and `evaluated` marks the rounds where it was refreshed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub cluster: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub b: usize,
    pub seed: u64,
    pub replay: String,
    pub ucr: f64,
    pub loss_mean: f64,
    pub td_abs_mean: f64,
    pub ker: f64,
    pub ktc: f64,
    pub diag_valid: bool,
    pub key_fraction_buffer: f64,
    pub key_fraction_top: f64,
    pub success_rate: f64,
    pub evaluated: bool,
    pub stage: Stage,
    pub energy_fly: f64,
    pub energy_train: f64,
    pub energy_comm: f64,
    pub energy_agg: f64,
    pub energy_total: f64,
    pub energy_unmet: f64,
    pub buffer_len: usize,
    pub new_transitions: usize,
    pub hazard_failures: usize,
    pub ch: usize,
}

impl RoundMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.ucr,
            self.loss_mean,
            self.td_abs_mean,
            self.ker,
            self.ktc,
            self.key_fraction_buffer,
            self.key_fraction_top,
            self.success_rate,
            self.energy_fly,
            self.energy_train,
            self.energy_comm,
            self.energy_agg,
            self.energy_total,
            self.energy_unmet,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn write_metrics(w: impl Write, rows: &[RoundMetrics]) -> Result<()> {
    let mut w = w;
    writeln!(w, "{METRICS_SCHEMA}")?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record(METRICS_HEADER)?;
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_metrics(r: impl Read) -> Result<Vec<RoundMetrics>> {
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = csv.headers()?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::format("metrics", "unexpected column header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in csv.deserialize::<RoundMetrics>().enumerate() {
        let row = rec.map_err(|e| Error::format("metrics", format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}
