//! Post-hoc learning-signal analysis.
//!
//! Key-experience flags are computed from transition metadata and joined
//! episode outcomes only. Nothing in this module feeds back into sampling
//! or the loss.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::approximator::{forward, greedy_action, td_errors, NetworkParams, TdTarget};
use crate::config::{DiagParams, EnvKind, ExperimentConfig};
use crate::environment::{EpisodeOutcome, Environment, Observation, TerminalKind, Transition, HAZARD_SOURCE};
use crate::error::{Error, Result};
use crate::numeric::{euclidean, pairwise_sum};
use crate::replay::{top_p_subset_where, ReplayBuffer};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Early,
    Late,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Early => "early",
            Stage::Late => "late",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Stage::Early),
            "late" => Ok(Stage::Late),
            other => Err(Error::format("stage", format!("unknown stage `{other}`"))),
        }
    }
}

/// Tracks the Early to Late switch from periodic evaluation results.
///
/// The switch happens once the mean of the last `window` evaluations
/// reaches the threshold and never reverts.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTracker {
    threshold: f64,
    window: usize,
    history: Vec<f64>,
    stage: Stage,
    switch_round: Option<u64>,
}

impl StageTracker {
    pub const DEFAULT_WINDOW: usize = 3;

    pub fn new(threshold: f64, window: usize) -> Self {
        StageTracker {
            threshold,
            window: window.max(1),
            history: Vec::new(),
            stage: Stage::Early,
            switch_round: None,
        }
    }

    pub fn record(&mut self, round: u64, success_rate: f64) -> Stage {
        self.history.push(success_rate);
        if self.stage == Stage::Early {
            let tail = &self.history[self.history.len().saturating_sub(self.window)..];
            if pairwise_sum(tail) / tail.len() as f64 >= self.threshold {
                self.stage = Stage::Late;
                self.switch_round = Some(round);
            }
        }
        self.stage
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn switch_round(&self) -> Option<u64> {
        self.switch_round
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyIndicatorConfig {
    pub env_kind: EnvKind,
    pub stage: Stage,
    pub near_success_radius: f64,
    pub hazard_margin: f64,
    pub goal_margin: f64,
    /// Absolute distance from the hazard source.
    pub failure_radius: f64,
    pub hazard_source: [f64; 3],
}

impl KeyIndicatorConfig {
    pub fn new(env_kind: EnvKind, stage: Stage, diag: &DiagParams, sigma: f64) -> Self {
        KeyIndicatorConfig {
            env_kind,
            stage,
            near_success_radius: diag.near_success_radius,
            hazard_margin: diag.hazard_margin,
            goal_margin: diag.goal_margin,
            failure_radius: diag.failure_radius_sigmas * sigma,
            hazard_source: HAZARD_SOURCE,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig, stage: Stage) -> Self {
        Self::new(cfg.env_kind, stage, &cfg.diag_params, cfg.hazard.sigma)
    }
}

/// Key-experience flag for one transition given its episode's outcome.
pub fn kappa(t: &Transition, outcome: Option<&EpisodeOutcome>, cfg: &KeyIndicatorConfig) -> Result<bool> {
    let outcome = outcome.ok_or(Error::MissingOutcome(t.episode_id))?;
    let succeeded = outcome.terminal == TerminalKind::Success;
    Ok(match (cfg.env_kind, cfg.stage) {
        (EnvKind::Fire, _) => succeeded || outcome.final_goal_distance <= cfg.near_success_radius,
        (EnvKind::Chem, Stage::Early) => succeeded,
        (EnvKind::Chem, Stage::Late) => {
            let hazard_drop = t.obs.hazard_reading() - t.hazard_at_next;
            let corrective = hazard_drop > cfg.hazard_margin && t.goal_dist_delta < -cfg.goal_margin;
            let near_failure = t.terminal_kind == TerminalKind::HazardFailure
                && euclidean(&t.next_obs.position(), &cfg.hazard_source) <= cfg.failure_radius;
            corrective || near_failure
        }
    })
}

/// Flags for every buffered transition whose episode has finished.
pub fn kappa_flags(
    buf: &ReplayBuffer,
    outcomes: &BTreeMap<u64, EpisodeOutcome>,
    cfg: &KeyIndicatorConfig,
) -> Result<BTreeMap<u64, bool>> {
    buf.iter()
        .filter_map(|(_, t)| outcomes.get(&t.episode_id).map(|o| (t, o)))
        .map(|(t, o)| Ok((t.id, kappa(t, Some(o), cfg)?)))
        .collect()
}

fn key_fraction(ids: impl ExactSizeIterator<Item = bool>) -> f64 {
    let n = ids.len();
    let key = ids.filter(|&k| k).count();
    key as f64 / n as f64
}

/// Fraction of key transitions in `top_set` minus the fraction over the
/// whole flagged population.
pub fn ker(top_set: &[u64], flags: &BTreeMap<u64, bool>) -> Result<f64> {
    if top_set.is_empty() {
        return Err(Error::Empty("top set"));
    }
    if flags.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let top = top_set
        .iter()
        .map(|id| flags.get(id).copied().ok_or(Error::format("top set", format!("id {id} has no flag"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(key_fraction(top.into_iter()) - key_fraction(flags.values().copied()))
}

/// Share of absolute TD mass in `top_set` carried by key transitions.
pub fn ktc(top_set: &[u64], td_abs: &BTreeMap<u64, f64>, flags: &BTreeMap<u64, bool>) -> Result<f64> {
    let mut all = Vec::with_capacity(top_set.len());
    let mut key = Vec::new();
    for id in top_set {
        let d = *td_abs
            .get(id)
            .ok_or(Error::format("td map", format!("id {id} missing")))?;
        let k = *flags
            .get(id)
            .ok_or(Error::format("top set", format!("id {id} has no flag")))?;
        all.push(d);
        if k {
            key.push(d);
        }
    }
    let total = pairwise_sum(&all);
    if !(total > 0.0) {
        return Err(Error::ZeroTdMass);
    }
    Ok(pairwise_sum(&key) / total)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("rank input"));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "spearman inputs",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Empty("spearman needs at least two points"));
    }
    // doubled average ranks are integers, so the sums below are exact
    let doubled = |v: &[f64]| -> Result<Vec<i128>> { Ok(average_ranks(v)?.iter().map(|r| (2.0 * r) as i128).collect()) };
    let rx = doubled(xs)?;
    let ry = doubled(ys)?;
    let n = rx.len() as i128;
    let (sx, sy): (i128, i128) = (rx.iter().sum(), ry.iter().sum());
    let sxx = n * rx.iter().map(|r| r * r).sum::<i128>() - sx * sx;
    let syy = n * ry.iter().map(|r| r * r).sum::<i128>() - sy * sy;
    if sxx == 0 || syy == 0 {
        return Err(Error::ConstantInput);
    }
    let sxy = n * rx.iter().zip(&ry).map(|(a, b)| a * b).sum::<i128>() - sx * sy;
    Ok((sxy as f64 / (sxx as f64 * syy as f64).sqrt()).clamp(-1.0, 1.0))
}

/// Success rate of `policy` over `episodes` fresh episodes.
pub fn evaluate_with(
    env: &Environment,
    episodes: usize,
    rng: &mut RngStream,
    mut policy: impl FnMut(&Observation) -> Result<usize>,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    let mut successes = 0usize;
    for e in 0..episodes {
        let (mut state, mut obs) = env.reset(e as u64, rng);
        loop {
            let action = policy(&obs)?;
            let (next, t) = env.step(&state, action, 0, 0, rng)?;
            if t.done {
                if t.terminal_kind == TerminalKind::Success {
                    successes += 1;
                }
                break;
            }
            obs = t.next_obs;
            state = next;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// Greedy rollouts of `model`.
pub fn evaluate_policy(model: &NetworkParams, env: &Environment, episodes: usize, rng: &mut RngStream) -> Result<f64> {
    evaluate_with(env, episodes, rng, |obs| Ok(greedy_action(&forward(model, obs.as_slice())?)))
}

/// Exposure and key-experience summary for one cluster at one point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub round: u64,
    pub ucr: f64,
    pub ker: f64,
    pub ktc: f64,
    pub key_fraction_in_buffer: f64,
    pub key_fraction_in_top: f64,
    /// Flagged (finished-episode) transitions considered.
    pub population: usize,
    pub top_set: Vec<u64>,
    pub td_abs: BTreeMap<u64, f64>,
}

/// Shared diagnostic pipeline: flags, T_p over finished-episode
/// transitions, |δ| on T_p from (model, target), then KER and KTC.
#[allow(clippy::too_many_arguments)]
pub fn diagnose_buffer(
    buf: &ReplayBuffer,
    outcomes: &BTreeMap<u64, EpisodeOutcome>,
    model: &NetworkParams,
    target: &NetworkParams,
    td: TdTarget,
    kcfg: &KeyIndicatorConfig,
    diag: &DiagParams,
    batch_size: usize,
    round: u64,
    ucr: f64,
    rng: &mut RngStream,
) -> Result<DiagnosticsRecord> {
    let flags = kappa_flags(buf, outcomes, kcfg)?;
    if flags.is_empty() {
        return Err(Error::Empty("finished-episode transitions"));
    }
    let top_set = top_p_subset_where(
        buf,
        diag.top_p_percent,
        diag.resample_count,
        batch_size,
        diag.ranking,
        rng,
        |id| flags.contains_key(&id),
    )?;
    let batch: Vec<&Transition> = top_set
        .iter()
        .map(|&id| buf.get_by_id(id).ok_or(Error::EmptyBuffer))
        .collect::<Result<_>>()?;
    let deltas = td_errors(model, target, &batch, td)?;
    let td_abs: BTreeMap<u64, f64> = top_set.iter().zip(&deltas).map(|(&id, d)| (id, d.abs())).collect();
    let ker_value = ker(&top_set, &flags)?;
    let ktc_value = ktc(&top_set, &td_abs, &flags)?;
    Ok(DiagnosticsRecord {
        round,
        ucr,
        ker: ker_value,
        ktc: ktc_value,
        key_fraction_in_buffer: key_fraction(flags.values().copied()),
        key_fraction_in_top: key_fraction(top_set.iter().map(|id| flags[id])),
        population: flags.len(),
        top_set,
        td_abs,
    })
}
