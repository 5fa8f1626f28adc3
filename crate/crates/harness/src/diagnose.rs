//! Offline recomputation of exposure and key-experience diagnostics from a
//! run directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ec_hfrl_core::approximator::read_checkpoint;
use ec_hfrl_core::diagnostics::{diagnose_buffer, KeyIndicatorConfig, Stage};
use ec_hfrl_core::replay::snapshot::{read_buffer, read_outcomes};
use ec_hfrl_core::replay::union_coverage_ratio;
use ec_hfrl_core::{derive_rng, ExperimentConfig, Label, Purpose};
use serde::{Deserialize, Serialize};

pub const DIAGNOSTICS_HEADER: [&str; 13] = [
    "round",
    "cluster",
    "stage",
    "p",
    "ucr",
    "ker",
    "ktc",
    "key_fraction_buffer",
    "key_fraction_top",
    "top_size",
    "population",
    "success_rate",
    "ranking",
];

#[derive(Clone, Debug)]
pub struct DiagnoseArgs {
    pub run: PathBuf,
    pub p: f64,
    /// Overrides the stage recorded in the run manifest.
    pub stage: Option<Stage>,
    /// Defaults to `<run>/diagnostics.csv`.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub round: u64,
    pub cluster: usize,
    pub stage: Stage,
    pub p: f64,
    pub ucr: f64,
    pub ker: f64,
    pub ktc: f64,
    pub key_fraction_buffer: f64,
    pub key_fraction_top: f64,
    pub top_size: usize,
    pub population: usize,
    pub success_rate: f64,
    pub ranking: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("missing {}", path.display()))
}

fn manifest(run: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(run.join("manifest.txt")).with_context(|| format!("missing {}/manifest.txt", run.display()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Minibatch ids of the last logged round, grouped by cluster then learner.
fn last_minibatches(run: &Path) -> Result<BTreeMap<usize, Vec<Vec<u64>>>> {
    let path = run.join("minibatches.csv");
    let mut lines = open(&path)?.lines();
    lines.next().transpose()?;
    let mut by_round: BTreeMap<u64, BTreeMap<usize, BTreeMap<usize, Vec<u64>>>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse_err = || format!("{} line {}", path.display(), i + 2);
        if cols.len() != 5 {
            bail!("{}: expected 5 columns", parse_err());
        }
        let round: u64 = cols[0].parse().with_context(parse_err)?;
        let cluster: usize = cols[1].parse().with_context(parse_err)?;
        let learner: usize = cols[2].parse().with_context(parse_err)?;
        let step: usize = cols[3].parse().with_context(parse_err)?;
        if step != 0 {
            continue;
        }
        let ids = cols[4]
            .split_whitespace()
            .map(|v| v.parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(parse_err)?;
        by_round.entry(round).or_default().entry(cluster).or_default().insert(learner, ids);
    }
    Ok(by_round
        .pop_last()
        .map(|(_, clusters)| clusters.into_iter().map(|(c, l)| (c, l.into_values().collect())).collect())
        .unwrap_or_default())
}

pub fn diagnose_run(args: &DiagnoseArgs) -> Result<Vec<DiagnosticsRow>> {
    let run = &args.run;
    let cfg_path = run.join("config.cfg");
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("missing {}", cfg_path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    cfg.diag_params.top_p_percent = args.p;
    cfg.validate().context("diagnostic parameters")?;
    let manifest = manifest(run)?;
    let stage = match args.stage {
        Some(s) => s,
        None => manifest.get("final_stage").map_or(Ok(Stage::Early), |s| s.parse())?,
    };
    let success_rate = manifest
        .get("final_success_rate")
        .and_then(|s| s.parse::<f64>().ok())
        .unwrap_or(0.0);
    let kcfg = KeyIndicatorConfig::from_config(&cfg, stage);
    let minibatches = last_minibatches(run)?;
    let snaps = run.join("snapshots");

    let mut rows = Vec::with_capacity(cfg.n_clusters);
    for c in 0..cfg.n_clusters {
        let buf = read_buffer(open(&snaps.join(format!("cluster{c}_buffer.csv")))?)
            .with_context(|| format!("cluster {c} buffer snapshot"))?;
        let outcomes = read_outcomes(open(&snaps.join(format!("cluster{c}_episodes.csv")))?)
            .with_context(|| format!("cluster {c} episode outcomes"))?;
        let model = read_checkpoint(&mut open(&snaps.join(format!("cluster{c}_model.ckpt")))?)?;
        let target = read_checkpoint(&mut open(&snaps.join(format!("cluster{c}_target.ckpt")))?)?;
        let ucr = match minibatches.get(&c) {
            Some(batches) => union_coverage_ratio(batches)?,
            None => bail!("no minibatch log for cluster {c} in {}", run.display()),
        };
        let mut rng = derive_rng(
            cfg.master_seed,
            &[Label(Purpose::DiagResample, 1), Label(Purpose::Cluster, c as u64)],
        );
        let rec = diagnose_buffer(
            &buf,
            &outcomes,
            &model.params,
            &target.params,
            cfg.net_spec.td_target(),
            &kcfg,
            &cfg.diag_params,
            cfg.minibatch_size,
            model.round,
            ucr,
            &mut rng,
        )
        .with_context(|| format!("cluster {c}"))?;
        rows.push(DiagnosticsRow {
            round: rec.round,
            cluster: c,
            stage,
            p: args.p,
            ucr: rec.ucr,
            ker: rec.ker,
            ktc: rec.ktc,
            key_fraction_buffer: rec.key_fraction_in_buffer,
            key_fraction_top: rec.key_fraction_in_top,
            top_size: rec.top_set.len(),
            population: rec.population,
            success_rate,
            ranking: cfg.diag_params.ranking.as_str().into(),
        });
    }
    Ok(rows)
}

/// Recompute diagnostics for every cluster and write them as CSV.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(PathBuf, Vec<DiagnosticsRow>)> {
    let rows = diagnose_run(args)?;
    let path = args.out.clone().unwrap_or_else(|| args.run.join("diagnostics.csv"));
    let mut csv = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?));
    csv.write_record(DIAGNOSTICS_HEADER)?;
    for r in &rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    csv.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?.flush()?;
    Ok((path, rows))
}
