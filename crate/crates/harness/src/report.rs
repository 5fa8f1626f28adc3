//! SVG figures and rank-correlation table from a sweep summary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ec_hfrl_core::diagnostics::spearman;
use ec_hfrl_core::numeric::pairwise_mean;

use crate::svg::{grouped_bars, scatter, Point};
use crate::sweep::{read_summary, SummaryRow};

#[derive(Clone, Debug)]
pub struct ReportArgs {
    /// A `summary.csv` file or a sweep directory containing one.
    pub input: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub replay: String,
    pub pair: &'static str,
    pub n: usize,
    /// `None` when undefined (fewer than two points or a constant column).
    pub rho: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub correlations: Vec<Correlation>,
}

fn load(input: &Path) -> Result<Vec<SummaryRow>> {
    let path = if input.is_dir() { input.join("summary.csv") } else { input.to_path_buf() };
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    read_summary(f).with_context(|| format!("reading {}", path.display()))
}

/// Spearman rho of final success against KER, K and mean UCR, per replay
/// mode.
pub fn correlation_table(rows: &[SummaryRow]) -> Vec<Correlation> {
    let mut groups: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.replay.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (replay, rs) in groups {
        let sr: Vec<f64> = rs.iter().map(|r| r.final_success).collect();
        let columns: [(&'static str, Vec<f64>); 3] = [
            ("SR-KER", rs.iter().map(|r| r.final_ker).collect()),
            ("SR-K", rs.iter().map(|r| r.k as f64).collect()),
            ("SR-UCR", rs.iter().map(|r| r.mean_ucr).collect()),
        ];
        for (pair, xs) in columns {
            out.push(Correlation {
                replay: replay.to_string(),
                pair,
                n: rs.len(),
                rho: spearman(&sr, &xs).ok(),
            });
        }
    }
    out
}

fn render_table(rows: &[Correlation]) -> String {
    let mut s = String::from("replay   pair     n     spearman_rho\n");
    for c in rows {
        let rho = c.rho.map_or("undefined".to_string(), |r| format!("{r:.6}"));
        s.push_str(&format!("{:<8} {:<8} {:<5} {rho}\n", c.replay, c.pair, c.n));
    }
    s
}

/// Mean of `f` per (replay, K, b) cell across seeds, in sorted order.
fn by_cell(rows: &[SummaryRow], f: impl Fn(&SummaryRow) -> f64) -> (Vec<String>, Vec<f64>) {
    let mut cells: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.replay.clone(), r.k, r.b)).or_default().push(f(r));
    }
    let multi_mode = cells.keys().map(|k| &k.0).collect::<std::collections::BTreeSet<_>>().len() > 1;
    cells
        .into_iter()
        .map(|((replay, k, b), v)| {
            let name = if multi_mode { format!("{replay} K={k} b={b}") } else { format!("K={k} b={b}") };
            (name, pairwise_mean(&v))
        })
        .unzip()
}

/// Write the figures and `correlations.txt` into `args.out`. Nothing is
/// written when the input has no successful rows.
pub fn cmd_report(args: &ReportArgs) -> Result<ReportOutput> {
    let rows: Vec<SummaryRow> = load(&args.input)?.into_iter().filter(|r| r.status == "ok").collect();
    if rows.is_empty() {
        bail!("no successful sweep rows in {}", args.input.display());
    }

    let (cats, ucr) = by_cell(&rows, |r| r.mean_ucr);
    let ucr_svg = grouped_bars("Mean UCR per (K, b)", "UCR", &cats, &[("mean UCR", ucr)]);

    let points: Vec<Point> = rows
        .iter()
        .map(|r| Point {
            x: r.mean_ucr,
            y: r.final_ker,
            shade: Some(r.final_success),
            label: format!(
                "{} K={} b={} seed={} success={}",
                r.replay, r.k, r.b, r.seed, r.final_success
            ),
        })
        .collect();
    let ker_svg = scatter("KER vs UCR (colour: final success)", "mean UCR", "final KER", &points);

    let (cats, success) = by_cell(&rows, |r| r.final_success);
    let (_, energy) = by_cell(&rows, |r| r.energy_total);
    let bars_svg = grouped_bars(
        "Final success and total energy per (K, b)",
        "relative to series maximum",
        &cats,
        &[("success rate", success), ("energy", energy)],
    );

    let correlations = correlation_table(&rows);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let files = vec![
        (args.out.join("ucr_by_kb.svg"), ucr_svg),
        (args.out.join("ker_vs_ucr.svg"), ker_svg),
        (args.out.join("success_energy.svg"), bars_svg),
        (args.out.join("correlations.txt"), render_table(&correlations)),
    ];
    for (path, body) in &files {
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ReportOutput {
        files: files.into_iter().map(|(p, _)| p).collect(),
        correlations,
    })
}
