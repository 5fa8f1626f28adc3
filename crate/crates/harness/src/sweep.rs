//! (K, b) x seed grids, optionally paired across replay modes.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ec_hfrl_core::metrics::{write_metrics, RoundMetrics};
use ec_hfrl_core::numeric::pairwise_mean;
use ec_hfrl_core::{ExperimentConfig, ReplayMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{run_config, ConfigOverrides};

pub const SUMMARY_SCHEMA: &str = "#schema=summary/v1";

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub ks: Vec<usize>,
    pub bs: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base: ExperimentConfig,
    pub replays: Vec<ReplayMode>,
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut cells = Vec::new();
        for &replay in &self.replays {
            for &k in &self.ks {
                for &b in &self.bs {
                    for &seed in &self.seeds {
                        let mut cfg = self.base.clone();
                        cfg.replay = replay;
                        cfg.learners_per_cluster = k;
                        cfg.minibatch_size = b;
                        cfg.master_seed = seed;
                        cells.push(cfg);
                    }
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.bs.is_empty() || self.seeds.is_empty() || self.replays.is_empty() {
            bail!("sweep grid is empty");
        }
        for cfg in self.cells() {
            cfg.validate().with_context(|| {
                format!("cell K={} b={} is invalid", cfg.learners_per_cluster, cfg.minibatch_size)
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub overrides: ConfigOverrides,
    pub ks: Vec<usize>,
    pub bs: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Run every cell under both PER and uniform replay.
    pub ablation: bool,
    pub out: PathBuf,
}

/// Final-state summary of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub replay: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub b: usize,
    pub seed: u64,
    pub status: String,
    pub final_success: f64,
    pub mean_ucr: f64,
    pub final_ker: f64,
    pub final_ktc: f64,
    pub energy_total: f64,
    pub rounds: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub summary: Vec<SummaryRow>,
    pub failed: usize,
}

pub fn cell_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join("cells").join(format!(
        "{}_K{}_b{}_s{}",
        cfg.replay.as_str(),
        cfg.learners_per_cluster,
        cfg.minibatch_size,
        cfg.master_seed
    ))
}

fn summarize(cfg: &ExperimentConfig, rows: &[RoundMetrics], final_success: f64, energy_total: f64) -> SummaryRow {
    let ucr: Vec<f64> = rows.iter().map(|r| r.ucr).collect();
    let last_round = rows.last().map(|r| r.round);
    let last: Vec<&RoundMetrics> = rows.iter().filter(|r| Some(r.round) == last_round).collect();
    let mean_of = |f: fn(&RoundMetrics) -> f64| {
        let v: Vec<f64> = last.iter().filter(|r| r.diag_valid).map(|r| f(r)).collect();
        if v.is_empty() {
            0.0
        } else {
            pairwise_mean(&v)
        }
    };
    SummaryRow {
        replay: cfg.replay.as_str().into(),
        k: cfg.learners_per_cluster,
        b: cfg.minibatch_size,
        seed: cfg.master_seed,
        status: "ok".into(),
        final_success,
        mean_ucr: if ucr.is_empty() { 0.0 } else { pairwise_mean(&ucr) },
        final_ker: mean_of(|r| r.ker),
        final_ktc: mean_of(|r| r.ktc),
        energy_total,
        rounds: cfg.rounds,
        error: String::new(),
    }
}

fn failed_row(cfg: &ExperimentConfig, err: &anyhow::Error) -> SummaryRow {
    SummaryRow {
        replay: cfg.replay.as_str().into(),
        k: cfg.learners_per_cluster,
        b: cfg.minibatch_size,
        seed: cfg.master_seed,
        status: "failed".into(),
        final_success: 0.0,
        mean_ucr: 0.0,
        final_ker: 0.0,
        final_ktc: 0.0,
        energy_total: 0.0,
        rounds: cfg.rounds,
        error: format!("{err:#}").replace([',', '\n'], ";"),
    }
}

pub fn write_summary(w: impl Write, rows: &[SummaryRow]) -> Result<()> {
    let mut w = w;
    writeln!(w, "{SUMMARY_SCHEMA}")?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record([
        "replay",
        "K",
        "b",
        "seed",
        "status",
        "final_success",
        "mean_ucr",
        "final_ker",
        "final_ktc",
        "energy_total",
        "rounds",
        "error",
    ])?;
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_summary(r: impl Read) -> Result<Vec<SummaryRow>> {
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in csv.deserialize::<SummaryRow>().enumerate() {
        rows.push(rec.with_context(|| format!("summary row {}", i + 1))?);
    }
    Ok(rows)
}

/// Run every cell, one per worker, then merge metrics and the summary.
///
/// Failed cells are recorded in the summary and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out: &Path) -> Result<SweepOutcome> {
    spec.validate()?;
    fs::create_dir_all(out.join("cells")).with_context(|| format!("creating {}", out.display()))?;
    let cells = spec.cells();
    let results: Vec<(SummaryRow, Vec<RoundMetrics>)> = cells
        .par_iter()
        .map(|cfg| {
            let dir = cell_dir(out, cfg);
            match run_config(cfg, &dir) {
                Ok(run) => {
                    let success = run.final_success().unwrap_or(0.0);
                    let energy = run.energy.report().total;
                    (summarize(cfg, &run.metrics, success, energy), run.metrics)
                }
                Err(e) => (failed_row(cfg, &e), Vec::new()),
            }
        })
        .collect();

    let mut all_metrics = Vec::new();
    let mut summary = Vec::with_capacity(results.len());
    for (row, metrics) in results {
        summary.push(row);
        all_metrics.extend(metrics);
    }
    let mut w = BufWriter::new(File::create(out.join("metrics.csv"))?);
    write_metrics(&mut w, &all_metrics)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("summary.csv"))?);
    write_summary(&mut w, &summary)?;
    w.flush()?;
    let failed = summary.iter().filter(|r| r.status != "ok").count();
    Ok(SweepOutcome { summary, failed })
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepOutcome> {
    let base = args.overrides.build()?;
    let replays = if args.ablation {
        vec![ReplayMode::Prioritized, ReplayMode::Uniform]
    } else {
        vec![base.replay]
    };
    let spec = SweepSpec {
        ks: if args.ks.is_empty() { vec![base.learners_per_cluster] } else { args.ks.clone() },
        bs: if args.bs.is_empty() { vec![base.minibatch_size] } else { args.bs.clone() },
        seeds: if args.seeds.is_empty() { vec![base.master_seed] } else { args.seeds.clone() },
        base,
        replays,
    };
    run_sweep(&spec, &args.out)
}
