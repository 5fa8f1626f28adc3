use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ec_hfrl::{
    cmd_diagnose, cmd_report, cmd_run, cmd_sweep, ConfigOverrides, DiagnoseArgs, ReportArgs, RunArgs, SweepArgs,
};
use ec_hfrl_core::diagnostics::Stage;
use ec_hfrl_core::{EnvKind, ReplayMode};

#[derive(Parser)]
#[command(name = "ec-hfrl", version, about = "Experience-constrained hierarchical federated RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics, checkpoints and snapshots.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        b: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a (K, b) x seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K", value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long = "b", value_delimiter = ',', required = true)]
        bs: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Run every cell under both PER and uniform replay with matched seeds.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG figures and a rank-correlation table from a sweep.
    Report {
        /// Sweep directory or summary.csv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute T_p, KER, KTC and UCR from a run directory.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        p: f64,
        #[arg(long)]
        stage: Option<Stage>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    replay: Option<ReplayMode>,
}

impl Common {
    fn overrides(self, k: Option<usize>, b: Option<usize>, seed: Option<u64>) -> ConfigOverrides {
        ConfigOverrides {
            config: self.config,
            env: self.env,
            k,
            b,
            rounds: self.rounds,
            seed,
            replay: self.replay,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, k, b, seed, out } => cmd_run(&RunArgs {
            overrides: common.overrides(k, b, seed),
            out,
        })
        .map(|run| {
            match run.final_success() {
                Some(s) => println!("final success rate {s}"),
                None => println!("no rounds executed"),
            }
            true
        }),
        Command::Sweep {
            common,
            ks,
            bs,
            seeds,
            ablation,
            out,
        } => cmd_sweep(&SweepArgs {
            overrides: common.overrides(None, None, None),
            ks,
            bs,
            seeds,
            ablation,
            out,
        })
        .map(|o| {
            println!("{} cells, {} failed", o.summary.len(), o.failed);
            for row in o.summary.iter().filter(|r| r.status != "ok") {
                eprintln!("failed: {} K={} b={} seed={}: {}", row.replay, row.k, row.b, row.seed, row.error);
            }
            o.failed == 0
        }),
        Command::Report { input, out } => cmd_report(&ReportArgs { input, out }).map(|r| {
            for f in r.files {
                println!("{}", f.display());
            }
            true
        }),
        Command::Diagnose { run, p, stage, out } => cmd_diagnose(&DiagnoseArgs { run, p, stage, out }).map(|(path, _)| {
            println!("{}", path.display());
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
