//! Command implementations behind the `ec-hfrl` binary.

mod diagnose;
mod report;
mod sweep;
pub mod svg;

use std::path::PathBuf;

use anyhow::{Context, Result};
use ec_hfrl_core::config::{apply_seed_override, load_config, SEED_ENV_VAR};
use ec_hfrl_core::federation::{run_experiment, RunArtifacts, RunOptions};
use ec_hfrl_core::{EnvKind, ExperimentConfig, ReplayMode};

pub use diagnose::{cmd_diagnose, DiagnoseArgs, DiagnosticsRow, DIAGNOSTICS_HEADER};
pub use report::{cmd_report, correlation_table, Correlation, ReportArgs, ReportOutput};
pub use sweep::{cell_dir, cmd_sweep, read_summary, run_sweep, write_summary, SummaryRow, SweepArgs, SweepOutcome, SweepSpec};

/// Overrides applied on top of a config file (or the defaults).
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub config: Option<PathBuf>,
    pub env: Option<EnvKind>,
    pub k: Option<usize>,
    pub b: Option<usize>,
    pub rounds: Option<u64>,
    pub seed: Option<u64>,
    pub replay: Option<ReplayMode>,
}

impl ConfigOverrides {
    /// Config file, then the seed environment variable, then flags.
    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let mut cfg = ExperimentConfig::default();
                apply_seed_override(&mut cfg, std::env::var(SEED_ENV_VAR).ok().as_deref())?;
                cfg
            }
        };
        if let Some(env) = self.env {
            if env != cfg.env_kind {
                cfg.env_kind = env;
                cfg.net_spec.input_dim = env.obs_dim();
            }
        }
        if let Some(k) = self.k {
            cfg.learners_per_cluster = k;
        }
        if let Some(b) = self.b {
            cfg.minibatch_size = b;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(m) = self.replay {
            cfg.replay = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub overrides: ConfigOverrides,
    pub out: PathBuf,
}

/// Validate, then execute one run writing artifacts under `args.out`.
pub fn cmd_run(args: &RunArgs) -> Result<RunArtifacts> {
    let cfg = args.overrides.build()?;
    run_config(&cfg, &args.out)
}

pub fn run_config(cfg: &ExperimentConfig, out: &std::path::Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let opts = RunOptions {
        out_dir: Some(out.to_path_buf()),
    };
    run_experiment(cfg, &opts).with_context(|| format!("run writing to {}", out.display()))
}
