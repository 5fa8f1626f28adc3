//! Synchronized-round protocol: actor collection, learner selection, local
//! updates, cluster and global averaging, energy charging and cluster-head
//! rotation.

mod experiment;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rayon::prelude::*;

use crate::approximator::{init_params, NetworkParams};
use crate::config::ExperimentConfig;
use crate::energy::{AgentId, EnergyLedger, EnergyParams, EnergyTotals};
use crate::environment::{
    run_actor_episode_slice, AgentState, EpisodeOutcome, Environment, FlightMeter, IdSource, TerminalKind,
    Transition,
};
use crate::error::{Error, Result};
use crate::learner::{local_update, LearnerReport, LocalUpdate};
use crate::numeric::{pairwise_mean, pairwise_sum};
use crate::replay::{union_coverage_ratio, ReplayBuffer};
use crate::rng::{derive_rng, Label, Purpose, RngStream};

pub use experiment::{run_experiment, EvalRecord, RunArtifacts, RunOptions};

/// Cluster-head role and the members that already served in the current
/// rotation epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LeachState {
    pub ch: AgentId,
    pub served: BTreeSet<AgentId>,
}

impl LeachState {
    pub fn new(ch: AgentId) -> Self {
        LeachState {
            ch,
            served: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterState {
    pub index: usize,
    pub members: Vec<AgentId>,
    pub leach: LeachState,
    pub buffer: ReplayBuffer,
    pub model: NetworkParams,
    pub target: NetworkParams,
    /// Mid-episode state of each actor slot, resumed next round.
    pub actor_states: Vec<AgentState>,
    pub next_episode: u64,
    /// Outcomes of finished episodes that still have transitions buffered.
    pub outcomes: BTreeMap<u64, EpisodeOutcome>,
    /// Energy of this cluster's members.
    pub ledger: EnergyLedger,
    pub hazard_failures: usize,
}

#[derive(Clone, Debug)]
pub struct FleetState {
    pub clusters: Vec<ClusterState>,
    pub global: NetworkParams,
    pub round: u64,
    pub next_transition: u64,
}

impl FleetState {
    /// Initial fleet: contiguous equal-size clusters, one shared initial
    /// model, first member as cluster head.
    pub fn new(cfg: &ExperimentConfig, env: &Environment) -> Result<Self> {
        cfg.validate()?;
        let global = init_params(&cfg.net_spec, &mut derive_rng(cfg.master_seed, &[Label(Purpose::Init, 0)]));
        let size = cfg.cluster_size();
        let n_clusters = cfg.n_clusters as u64;
        let clusters = (0..cfg.n_clusters)
            .map(|c| {
                let members: Vec<AgentId> = (c * size..(c + 1) * size).collect();
                let mut ids = IdSource::new(0, c as u64, n_clusters);
                let mut rng = derive_rng(cfg.master_seed, &[Label(Purpose::Init, 1), Label(Purpose::Cluster, c as u64)]);
                let actor_states = (0..cfg.actors_per_cluster)
                    .map(|_| env.reset(ids.episode(), &mut rng).0)
                    .collect();
                ClusterState {
                    index: c,
                    leach: LeachState::new(members[0]),
                    ledger: EnergyLedger::new(members.iter().copied(), &cfg.energy_params),
                    members,
                    buffer: ReplayBuffer::from_params(&cfg.per_params, cfg.replay),
                    model: global.clone(),
                    target: global.clone(),
                    actor_states,
                    next_episode: ids.next_episode,
                    outcomes: BTreeMap::new(),
                    hazard_failures: 0,
                }
            })
            .collect();
        Ok(FleetState {
            clusters,
            global,
            round: 0,
            next_transition: 0,
        })
    }

    pub fn energy_totals(&self) -> EnergyTotals {
        let mut t = EnergyTotals::default();
        for c in &self.clusters {
            t.add(&c.ledger.totals());
        }
        t
    }

    /// Sum over all agents of `e_init - residual`, in micro-units.
    pub fn drawdown_micro(&self) -> u64 {
        self.clusters.iter().map(|c| c.ledger.drawdown_micro()).sum()
    }
}

/// What happened in one cluster during one round.
#[derive(Clone, Debug)]
pub struct ClusterRound {
    pub cluster: usize,
    pub actors: Vec<AgentId>,
    pub learners: Vec<AgentId>,
    pub ch: AgentId,
    pub next_ch: AgentId,
    pub transitions: Vec<Transition>,
    pub reports: Vec<LearnerReport>,
    pub ucr: f64,
    pub loss_mean: f64,
    pub td_abs_mean: f64,
    pub hazard_failures: usize,
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub round: u64,
    pub clusters: Vec<ClusterRound>,
    pub global_synced: bool,
    pub target_synced: bool,
}

fn sample_sorted(pool: &[AgentId], k: usize, rng: &mut RngStream) -> Vec<AgentId> {
    let mut picked: Vec<AgentId> = rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Uniform sample of `k` distinct eligible members, sorted by id.
///
/// With fewer than `k` eligible members strict mode fails and otherwise
/// every eligible member is returned.
pub fn select_active_learners(
    members: &[AgentId],
    k: usize,
    eligible: impl Fn(AgentId) -> bool,
    strict: bool,
    cluster: usize,
    rng: &mut RngStream,
) -> Result<Vec<AgentId>> {
    let pool: Vec<AgentId> = members.iter().copied().filter(|&a| eligible(a)).collect();
    if pool.len() < k {
        if strict {
            return Err(Error::NotEnoughAlive {
                cluster,
                alive: pool.len(),
                needed: k,
            });
        }
        return Ok(pool);
    }
    Ok(sample_sorted(&pool, k, rng))
}

/// LEACH threshold `P / (1 - P (r mod ceil(1/P)))`.
pub fn leach_threshold(p: f64, round: u64) -> f64 {
    let epoch = (1.0 / p).ceil() as u64;
    let denom = 1.0 - p * (round % epoch) as f64;
    if denom <= p {
        1.0
    } else {
        (p / denom).min(1.0)
    }
}

/// One LEACH rotation with caller-supplied uniform draws.
pub fn leach_rotate_with(
    members: &[AgentId],
    state: &LeachState,
    round: u64,
    residual: impl Fn(AgentId) -> u64,
    mut draw: impl FnMut() -> f64,
) -> LeachState {
    let n = members.len();
    if n == 0 {
        return state.clone();
    }
    let mut served = state.served.clone();
    if round.is_multiple_of(n as u64) {
        served.clear();
    }
    let threshold = leach_threshold(1.0 / n as f64, round);
    let mut winner: Option<(u64, AgentId)> = None;
    for &m in members {
        if served.contains(&m) {
            continue;
        }
        if draw() < threshold {
            let r = residual(m);
            if winner.is_none_or(|(best, _)| r > best) {
                winner = Some((r, m));
            }
        }
    }
    match winner {
        Some((_, ch)) => {
            served.insert(ch);
            LeachState { ch, served }
        }
        None => LeachState {
            ch: state.ch,
            served,
        },
    }
}

pub fn leach_rotate(
    members: &[AgentId],
    state: &LeachState,
    round: u64,
    residual: impl Fn(AgentId) -> u64,
    rng: &mut RngStream,
) -> LeachState {
    leach_rotate_with(members, state, round, residual, || rng.gen::<f64>())
}

/// Elementwise mean. Per element the values are sorted and averaged as
/// `min + sum(x - min) / n`, which makes the result independent of model
/// order and exact for identical or sign-symmetric inputs.
pub fn aggregate_average(models: &[NetworkParams]) -> Result<NetworkParams> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    if models.iter().any(|m| m.layout() != first.layout()) {
        return Err(Error::LayoutMismatch);
    }
    let n = models.len() as f64;
    let mut out = first.clone();
    let mut column = vec![0.0; models.len()];
    for (j, slot) in out.values_mut().iter_mut().enumerate() {
        for (c, m) in column.iter_mut().zip(models) {
            *c = m.values()[j];
        }
        column.sort_unstable_by(f64::total_cmp);
        let lo = column[0];
        for c in column.iter_mut() {
            *c -= lo;
        }
        *slot = lo + pairwise_sum(&column) / n;
    }
    if !crate::numeric::all_finite(out.values()) {
        return Err(Error::NonFinite("aggregated parameters"));
    }
    Ok(out)
}

struct LedgerMeter<'a> {
    ledger: &'a mut EnergyLedger,
    params: &'a EnergyParams,
    agent: AgentId,
    strict: bool,
}

impl FlightMeter for LedgerMeter<'_> {
    fn on_step(&mut self, action: usize) -> Result<bool> {
        let depleted = self.ledger.charge_fly(self.agent, action, self.params)?;
        Ok(self.strict && depleted)
    }
}

/// Budget share of each actor slot: `B / A`, remainder to the first slots.
pub fn actor_quotas(budget: usize, actors: usize) -> Vec<usize> {
    (0..actors)
        .map(|j| budget / actors + usize::from(j < budget % actors))
        .collect()
}

struct RoundCtx<'a> {
    cfg: &'a ExperimentConfig,
    env: &'a Environment,
    round: u64,
    first_transition: u64,
    epsilon: f64,
    beta: f64,
}

impl RoundCtx<'_> {
    fn rng(&self, cluster: usize, purpose: Purpose, index: u64) -> RngStream {
        derive_rng(
            self.cfg.master_seed,
            &[
                Label(Purpose::Round, self.round),
                Label(Purpose::Cluster, cluster as u64),
                Label(purpose, index),
            ],
        )
    }
}

fn cluster_round(c: &mut ClusterState, ctx: &RoundCtx<'_>) -> Result<ClusterRound> {
    let cfg = ctx.cfg;
    let strict = cfg.strict_energy;
    let eligible = |ledger: &EnergyLedger, a: AgentId| !strict || !ledger.is_depleted(a);

    // (1) experience collection
    let pool: Vec<AgentId> = c.members.iter().copied().filter(|&a| eligible(&c.ledger, a)).collect();
    let slots = cfg.actors_per_cluster;
    if pool.is_empty() {
        return Err(Error::NotEnoughAlive {
            cluster: c.index,
            alive: pool.len(),
            needed: 1,
        });
    }
    let mut order = rand::seq::index::sample(&mut ctx.rng(c.index, Purpose::ActorSelect, 0), pool.len(), pool.len())
        .into_iter()
        .map(|i| pool[i])
        .collect::<VecDeque<_>>();
    let mut actors = Vec::with_capacity(slots);
    let mut ids = IdSource::new(ctx.first_transition, c.next_episode, cfg.n_clusters as u64);
    let mut transitions = Vec::with_capacity(cfg.experience_budget_per_round);
    for (slot, quota) in actor_quotas(cfg.experience_budget_per_round, slots).into_iter().enumerate() {
        let mut rng = ctx.rng(c.index, Purpose::ActorEpisode, slot as u64);
        let mut pilot = order.pop_front();
        let mut left = quota;
        while left > 0 {
            let agent = pilot.ok_or(Error::NotEnoughAlive {
                cluster: c.index,
                alive: pool.len(),
                needed: slots,
            })?;
            actors.push(agent);
            let mut meter = LedgerMeter {
                ledger: &mut c.ledger,
                params: &cfg.energy_params,
                agent,
                strict,
            };
            let (batch, state) = run_actor_episode_slice(
                ctx.env,
                c.actor_states[slot],
                &c.model,
                ctx.epsilon,
                left,
                ctx.round,
                &mut ids,
                &mut meter,
                &mut rng,
            )?;
            c.actor_states[slot] = state;
            left -= batch.len();
            transitions.extend(batch);
            if strict && c.ledger.is_depleted(agent) {
                pilot = order.pop_front();
            }
        }
    }
    actors.sort_unstable();
    actors.dedup();
    c.next_episode = ids.next_episode;
    let mut hazard_failures = 0;
    for t in &transitions {
        if let Some(o) = EpisodeOutcome::from_terminal(t) {
            c.outcomes.insert(t.episode_id, o);
        }
        if t.terminal_kind == TerminalKind::HazardFailure {
            hazard_failures += 1;
        }
        c.buffer.push(t.clone())?;
    }
    c.hazard_failures += hazard_failures;

    // (2) local updates from the synchronized cluster model
    let learners = select_active_learners(
        &c.members,
        cfg.learners_per_cluster,
        |a| eligible(&c.ledger, a),
        strict,
        c.index,
        &mut ctx.rng(c.index, Purpose::LearnerSelect, 0),
    )?;
    let job = LocalUpdate {
        start_params: &c.model,
        target_params: &c.target,
        buffer: &c.buffer,
        batch_size: cfg.minibatch_size,
        local_steps: cfg.local_steps_per_learner,
        beta: ctx.beta,
        learning_rate: cfg.net_spec.learning_rate,
        td: cfg.net_spec.td_target(),
    };
    let reports: Vec<LearnerReport> = learners
        .par_iter()
        .enumerate()
        .map(|(i, &agent)| {
            let mut report = local_update(&job, i, &mut ctx.rng(c.index, Purpose::Learner, i as u64))?;
            report.learner = agent;
            Ok(report)
        })
        .collect::<Result<_>>()?;

    // (3) serialized priority updates, learner order then step order
    for r in &reports {
        for (mb, td) in r.minibatches.iter().zip(&r.td_errors) {
            c.buffer.update_priorities(&mb.ids, td)?;
        }
    }

    // (4) cluster aggregation and learning energy
    let ch = c.leach.ch;
    let ucr = exposure(&reports, cfg.ucr_all_steps)?;
    let losses: Vec<f64> = reports.iter().flat_map(|r| r.losses.iter().copied()).collect();
    let tds: Vec<f64> = reports.iter().flat_map(|r| r.td_errors.iter().flatten().map(|d| d.abs())).collect();
    if !reports.is_empty() {
        let models: Vec<NetworkParams> = reports.iter().map(|r| r.params.clone()).collect();
        c.model = aggregate_average(&models)?;
    }
    c.ledger.charge_learning_round(&learners, ch, &cfg.energy_params)?;

    // (6) head rotation
    let ledger = &c.ledger;
    c.leach = leach_rotate(
        &c.members,
        &c.leach,
        ctx.round,
        |a| ledger.residual_micro(a).unwrap_or(0),
        &mut ctx.rng(c.index, Purpose::Leach, 0),
    );

    let live_episodes: BTreeSet<u64> = c.buffer.iter().map(|(_, t)| t.episode_id).collect();
    c.outcomes.retain(|e, _| live_episodes.contains(e));

    Ok(ClusterRound {
        cluster: c.index,
        actors,
        learners,
        ch,
        next_ch: c.leach.ch,
        transitions,
        reports,
        ucr,
        loss_mean: if losses.is_empty() { 0.0 } else { pairwise_mean(&losses) },
        td_abs_mean: if tds.is_empty() { 0.0 } else { pairwise_mean(&tds) },
        hazard_failures,
    })
}

/// UCR of the first local step, or the mean over all steps.
fn exposure(reports: &[LearnerReport], all_steps: bool) -> Result<f64> {
    let steps = reports.first().map_or(0, |r| r.minibatches.len());
    if steps == 0 {
        return Ok(0.0);
    }
    let per_step = |s: usize| {
        let batches: Vec<&[u64]> = reports.iter().map(|r| r.minibatches[s].ids.as_slice()).collect();
        union_coverage_ratio(&batches)
    };
    if all_steps {
        let values = (0..steps).map(per_step).collect::<Result<Vec<_>>>()?;
        Ok(pairwise_mean(&values))
    } else {
        per_step(0)
    }
}

/// Execute one round. The input fleet is never modified; on error nothing
/// is committed.
pub fn run_round(fleet: &FleetState, cfg: &ExperimentConfig, env: &Environment) -> Result<(FleetState, RoundOutput)> {
    let t = fleet.round;
    let budget = cfg.experience_budget_per_round as u64;
    let mut next = fleet.clone();
    let outputs: Vec<ClusterRound> = next
        .clusters
        .par_iter_mut()
        .map(|c| {
            let ctx = RoundCtx {
                cfg,
                env,
                round: t,
                first_transition: fleet.next_transition + c.index as u64 * budget,
                epsilon: cfg.epsilon_at(t),
                beta: cfg.beta_at(t),
            };
            cluster_round(c, &ctx)
        })
        .collect::<Result<_>>()?;
    next.next_transition = fleet.next_transition + cfg.n_clusters as u64 * budget;

    // (5) global averaging and broadcast
    let global_synced = (t + 1).is_multiple_of(cfg.global_sync_period);
    if global_synced {
        let models: Vec<NetworkParams> = next.clusters.iter().map(|c| c.model.clone()).collect();
        next.global = aggregate_average(&models)?;
        for c in &mut next.clusters {
            c.model = next.global.clone();
        }
    }
    let target_synced = (t + 1).is_multiple_of(cfg.target_sync_period);
    if target_synced {
        for c in &mut next.clusters {
            c.target = c.model.clone();
        }
    }
    next.round = t + 1;
    Ok((
        next,
        RoundOutput {
            round: t,
            clusters: outputs,
            global_synced,
            target_synced,
        },
    ))
}
