//! End-to-end run: rounds, periodic evaluation, per-round diagnostics and
//! on-disk artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{run_round, FleetState, RoundOutput};
use crate::approximator::{write_checkpoint, Checkpoint, NetworkParams};
use crate::config::ExperimentConfig;
use crate::diagnostics::{diagnose_buffer, evaluate_policy, KeyIndicatorConfig, Stage, StageTracker};
use crate::energy::EnergyTotals;
use crate::environment::{write_trajectory_line, Environment, TRAJECTORY_HEADER};
use crate::error::{Error, Result};
use crate::metrics::{write_metrics, RoundMetrics};
use crate::replay::snapshot::{write_buffer, write_outcomes};
use crate::rng::{derive_rng, Label, Purpose};

pub const MINIBATCH_HEADER: &str = "round,cluster,learner,step,ids";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where to write artifacts. `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub round: u64,
    pub success_rate: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub metrics: Vec<RoundMetrics>,
    pub evals: Vec<EvalRecord>,
    pub stage_switch_round: Option<u64>,
    pub final_stage: Stage,
    pub fleet: FleetState,
    pub energy: EnergyTotals,
}

impl RunArtifacts {
    pub fn final_success(&self) -> Option<f64> {
        self.evals.last().map(|e| e.success_rate)
    }
}

struct Sink {
    dir: PathBuf,
    minibatches: BufWriter<File>,
    trajectory: Option<BufWriter<File>>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn checkpoint(path: &Path, config_hash: u64, round: u64, params: &NetworkParams) -> Result<()> {
    let mut w = create(path)?;
    write_checkpoint(
        &mut w,
        &Checkpoint {
            config_hash,
            round,
            params: params.clone(),
        },
    )?;
    w.flush()?;
    Ok(())
}

impl Sink {
    fn open(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::write(dir.join("config.cfg"), cfg.to_text())?;
        let mut minibatches = create(&dir.join("minibatches.csv"))?;
        writeln!(minibatches, "{MINIBATCH_HEADER}")?;
        let trajectory = if cfg.dump_trajectories {
            let mut w = create(&dir.join("trajectory.csv"))?;
            writeln!(w, "{TRAJECTORY_HEADER}")?;
            Some(w)
        } else {
            None
        };
        Ok(Sink {
            dir: dir.to_path_buf(),
            minibatches,
            trajectory,
        })
    }

    fn record_round(&mut self, out: &RoundOutput, all_steps: bool) -> Result<()> {
        for c in &out.clusters {
            for r in &c.reports {
                let steps = if all_steps { r.minibatches.len() } else { r.minibatches.len().min(1) };
                for (s, mb) in r.minibatches.iter().take(steps).enumerate() {
                    let ids: Vec<String> = mb.ids.iter().map(u64::to_string).collect();
                    writeln!(self.minibatches, "{},{},{},{s},{}", out.round, c.cluster, r.learner, ids.join(" "))?;
                }
            }
            if let Some(w) = self.trajectory.as_mut() {
                for t in &c.transitions {
                    write_trajectory_line(w, t)?;
                }
            }
        }
        Ok(())
    }
}

/// Run `cfg.rounds` rounds from a fresh fleet.
///
/// The global model is evaluated greedily every `eval_period` rounds and
/// after the last round. Exposure and key-experience diagnostics are
/// computed after every round on a dedicated random stream and never touch
/// the training state.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    cfg.validate()?;
    let env = Environment::from_config(cfg);
    let mut fleet = FleetState::new(cfg, &env)?;
    let hash = cfg.hash_u64();
    let mut sink = match &opts.out_dir {
        Some(dir) => {
            let s = Sink::open(dir, cfg)?;
            checkpoint(&dir.join("init.ckpt"), hash, 0, &fleet.global)?;
            Some(s)
        }
        None => None,
    };

    let mut tracker = StageTracker::new(cfg.diag_params.stage_success_threshold, StageTracker::DEFAULT_WINDOW);
    let mut metrics = Vec::with_capacity(cfg.rounds as usize * cfg.n_clusters);
    let mut evals = Vec::new();
    let mut success_rate = 0.0;
    for t in 0..cfg.rounds {
        let (next, out) = run_round(&fleet, cfg, &env)?;
        fleet = next;
        let evaluated = (t + 1) % cfg.eval_period == 0 || t + 1 == cfg.rounds;
        if evaluated {
            let mut rng = derive_rng(cfg.master_seed, &[Label(Purpose::Eval, t)]);
            success_rate = evaluate_policy(&fleet.global, &env, cfg.eval_episodes, &mut rng)?;
            tracker.record(t, success_rate);
            evals.push(EvalRecord { round: t, success_rate });
            if let Some(s) = &sink {
                checkpoint(&s.dir.join(format!("round_{:05}.ckpt", t + 1)), hash, t + 1, &fleet.global)?;
            }
        }
        let stage = tracker.stage();
        let kcfg = KeyIndicatorConfig::from_config(cfg, stage);
        for cr in &out.clusters {
            let c = &fleet.clusters[cr.cluster];
            let mut rng = derive_rng(
                cfg.master_seed,
                &[
                    Label(Purpose::Round, t),
                    Label(Purpose::Cluster, cr.cluster as u64),
                    Label(Purpose::DiagResample, 0),
                ],
            );
            let diag = diagnose_buffer(
                &c.buffer,
                &c.outcomes,
                &c.model,
                &c.target,
                cfg.net_spec.td_target(),
                &kcfg,
                &cfg.diag_params,
                cfg.minibatch_size,
                t,
                cr.ucr,
                &mut rng,
            )
            .ok();
            let energy = c.ledger.totals().report();
            let row = RoundMetrics {
                round: t,
                cluster: cr.cluster,
                k: cfg.learners_per_cluster,
                b: cfg.minibatch_size,
                seed: cfg.master_seed,
                replay: cfg.replay.as_str().to_string(),
                ucr: cr.ucr,
                loss_mean: cr.loss_mean,
                td_abs_mean: cr.td_abs_mean,
                ker: diag.as_ref().map_or(0.0, |d| d.ker),
                ktc: diag.as_ref().map_or(0.0, |d| d.ktc),
                diag_valid: diag.is_some(),
                key_fraction_buffer: diag.as_ref().map_or(0.0, |d| d.key_fraction_in_buffer),
                key_fraction_top: diag.as_ref().map_or(0.0, |d| d.key_fraction_in_top),
                success_rate,
                evaluated,
                stage,
                energy_fly: energy.fly,
                energy_train: energy.train,
                energy_comm: energy.comm,
                energy_agg: energy.agg,
                energy_total: energy.total,
                energy_unmet: energy.unmet,
                buffer_len: c.buffer.len(),
                new_transitions: cr.transitions.len(),
                hazard_failures: cr.hazard_failures,
                ch: cr.ch,
            };
            if !row.is_finite() {
                return Err(Error::NonFinite("round metrics"));
            }
            metrics.push(row);
        }
        if let Some(s) = sink.as_mut() {
            s.record_round(&out, cfg.ucr_all_steps)?;
        }
    }

    let artifacts = RunArtifacts {
        evals,
        stage_switch_round: tracker.switch_round(),
        final_stage: tracker.stage(),
        energy: fleet.energy_totals(),
        metrics,
        fleet,
    };
    if let Some(mut s) = sink {
        s.minibatches.flush()?;
        if let Some(w) = s.trajectory.as_mut() {
            w.flush()?;
        }
        finish(&s.dir, cfg, hash, &artifacts)?;
    }
    Ok(artifacts)
}

fn finish(dir: &Path, cfg: &ExperimentConfig, hash: u64, run: &RunArtifacts) -> Result<()> {
    let mut w = create(&dir.join("metrics.csv"))?;
    write_metrics(&mut w, &run.metrics)?;
    w.flush()?;
    if cfg.rounds > 0 {
        checkpoint(&dir.join("final.ckpt"), hash, cfg.rounds, &run.fleet.global)?;
    }
    let snaps = dir.join("snapshots");
    for c in &run.fleet.clusters {
        let mut w = create(&snaps.join(format!("cluster{}_buffer.csv", c.index)))?;
        write_buffer(&mut w, &c.buffer)?;
        w.flush()?;
        let mut w = create(&snaps.join(format!("cluster{}_episodes.csv", c.index)))?;
        write_outcomes(&mut w, &c.outcomes)?;
        w.flush()?;
        checkpoint(&snaps.join(format!("cluster{}_model.ckpt", c.index)), hash, cfg.rounds, &c.model)?;
        checkpoint(&snaps.join(format!("cluster{}_target.ckpt", c.index)), hash, cfg.rounds, &c.target)?;
    }
    let mut m = create(&dir.join("manifest.txt"))?;
    writeln!(m, "config_hash = {}", cfg.hash_hex())?;
    writeln!(m, "master_seed = {}", cfg.master_seed)?;
    writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(m, "rounds = {}", cfg.rounds)?;
    writeln!(m, "final_stage = {}", run.final_stage)?;
    match run.stage_switch_round {
        Some(r) => writeln!(m, "stage_switch_round = {r}")?,
        None => writeln!(m, "stage_switch_round = none")?,
    }
    match run.final_success() {
        Some(s) => writeln!(m, "final_success_rate = {s}")?,
        None => writeln!(m, "final_success_rate = none")?,
    }
    m.flush()?;
    Ok(())
}
