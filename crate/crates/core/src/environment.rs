//! Hazard-field navigation tasks.
//!
//! Both tasks live in the unit cube. Agents start in the `[0, 0.1]^3` corner
//! box, the goal sits in the opposite corner and the hazard source at the
//! cube center, so the straight-line route crosses the plume.
//!
//! * `Chem` (position-dependent leak): first-order dynamics, each action moves
//!   `0.05` along one axis or stays. Hazard is a Gaussian plume in position.
//! * `Fire` (state-dependent fire): second-order dynamics, actions accelerate
//!   along one axis or coast. Hazard is the plume scaled by
//!   `1 - 0.8 * min(speed / v_safe, 1)`, so lingering near the fire is worse
//!   than passing through fast.
//!
//! Each step a failure is drawn as `Bernoulli(F(Z(next_state)))` with
//! `F(z) = f_max * z^2`.

use std::io::Write;

use rand::Rng;

use crate::approximator::{forward, greedy_action, NetworkParams};
use crate::config::{EnvKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::numeric::euclidean;
use crate::rng::RngStream;

pub const N_ACTIONS: usize = 7;
/// Stay (Chem) or coast (Fire).
pub const STAY_ACTION: usize = 6;
pub const MAX_OBS_DIM: usize = 10;

pub const CHEM_STEP: f64 = 0.05;
pub const FIRE_DRAG: f64 = 0.95;
pub const FIRE_ACCEL: f64 = 0.01;
pub const FIRE_V_MAX: f64 = 0.08;
pub const CHEM_SUCCESS_RADIUS: f64 = 0.08;
pub const FIRE_SUCCESS_RADIUS: f64 = 0.05;
pub const START_BOX: f64 = 0.1;

pub const REWARD_SUCCESS: f64 = 10.0;
pub const REWARD_FAILURE: f64 = -10.0;
pub const STEP_COST: f64 = 0.01;
pub const EXPOSURE_WEIGHT: f64 = 1.0;

pub const HAZARD_SOURCE: [f64; 3] = [0.5, 0.5, 0.5];
pub const GOAL: [f64; 3] = [0.9, 0.9, 0.9];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardField {
    pub kind: EnvKind,
    pub source: [f64; 3],
    pub sigma: f64,
    pub v_safe: f64,
    pub f_max: f64,
}

impl HazardField {
    pub fn hazard_value(&self, state: &AgentState) -> f64 {
        let d2: f64 = state
            .position
            .iter()
            .zip(&self.source)
            .map(|(p, s)| (p - s) * (p - s))
            .sum();
        let plume = (-d2 / (2.0 * self.sigma * self.sigma)).exp();
        let z = match self.kind {
            EnvKind::Chem => plume,
            EnvKind::Fire => {
                let speed = norm(&state.velocity);
                plume * (1.0 - 0.8 * (speed / self.v_safe).min(1.0))
            }
        };
        // a source at infinity yields NaN-free zero; keep the range closed
        if z.is_nan() {
            0.0
        } else {
            z.clamp(0.0, 1.0)
        }
    }

    pub fn failure_prob(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::HazardOutOfRange(z));
        }
        Ok(self.f_max * z * z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub steps_elapsed: u32,
    pub alive: bool,
    pub episode_id: u64,
}

/// Normalized observation: position, goal offset, hazard reading and, for
/// `Fire`, velocity scaled by the speed cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    features: [f64; MAX_OBS_DIM],
    dim: u8,
}

impl Observation {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() > MAX_OBS_DIM || values.is_empty() {
            return Err(Error::LengthMismatch {
                what: "observation",
                expected: MAX_OBS_DIM,
                got: values.len(),
            });
        }
        let mut features = [0.0; MAX_OBS_DIM];
        features[..values.len()].copy_from_slice(values);
        Ok(Observation {
            features,
            dim: values.len() as u8,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.features[..self.dim as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn position(&self) -> [f64; 3] {
        [self.features[0], self.features[1], self.features[2]]
    }

    pub fn goal_delta(&self) -> [f64; 3] {
        [self.features[3], self.features[4], self.features[5]]
    }

    pub fn hazard_reading(&self) -> f64 {
        self.features[6]
    }

    pub fn goal_distance(&self) -> f64 {
        norm(&self.goal_delta())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerminalKind {
    None,
    Success,
    HazardFailure,
    Timeout,
    EnergyDepleted,
}

impl TerminalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::None => "none",
            TerminalKind::Success => "success",
            TerminalKind::HazardFailure => "hazard_failure",
            TerminalKind::Timeout => "timeout",
            TerminalKind::EnergyDepleted => "energy_depleted",
        }
    }
}

impl std::str::FromStr for TerminalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => TerminalKind::None,
            "success" => TerminalKind::Success,
            "hazard_failure" => TerminalKind::HazardFailure,
            "timeout" => TerminalKind::Timeout,
            "energy_depleted" => TerminalKind::EnergyDepleted,
            other => return Err(Error::format("terminal kind", other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub id: u64,
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub terminal_kind: TerminalKind,
    pub episode_id: u64,
    pub hazard_at_next: f64,
    pub goal_dist_delta: f64,
    pub round_collected: u64,
}

/// Hands out transition and episode ids.
#[derive(Clone, Debug, PartialEq)]
pub struct IdSource {
    pub next_transition: u64,
    pub next_episode: u64,
    /// Episode ids advance by this stride so several sources can share one
    /// id space without collisions.
    pub episode_stride: u64,
}

impl IdSource {
    pub fn new(first_transition: u64, first_episode: u64, episode_stride: u64) -> Self {
        IdSource {
            next_transition: first_transition,
            next_episode: first_episode,
            episode_stride: episode_stride.max(1),
        }
    }

    pub fn transition(&mut self) -> u64 {
        let id = self.next_transition;
        self.next_transition += 1;
        id
    }

    pub fn episode(&mut self) -> u64 {
        let id = self.next_episode;
        self.next_episode += self.episode_stride;
        id
    }
}

/// Hook called once per actor step with the chosen action. Returning `true`
/// grounds the agent (strict energy mode).
pub trait FlightMeter {
    fn on_step(&mut self, action: usize) -> Result<bool>;
}

impl FlightMeter for () {
    fn on_step(&mut self, _action: usize) -> Result<bool> {
        Ok(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Environment {
    pub hazard: HazardField,
    pub goal: [f64; 3],
    pub success_radius: f64,
    pub horizon: u32,
}

impl Environment {
    pub fn new(kind: EnvKind, sigma: f64, f_max: f64, v_safe: f64, horizon: u32) -> Self {
        Environment {
            hazard: HazardField {
                kind,
                source: HAZARD_SOURCE,
                sigma,
                v_safe,
                f_max,
            },
            goal: GOAL,
            success_radius: match kind {
                EnvKind::Chem => CHEM_SUCCESS_RADIUS,
                EnvKind::Fire => FIRE_SUCCESS_RADIUS,
            },
            horizon,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let h = &cfg.hazard;
        Environment::new(cfg.env_kind, h.sigma, h.f_max, h.v_safe, h.horizon)
    }

    pub fn kind(&self) -> EnvKind {
        self.hazard.kind
    }

    /// Same task with the hazard source moved out of reach.
    pub fn without_hazard(mut self) -> Self {
        self.hazard.source = [1e6; 3];
        self
    }

    pub fn hazard_value(&self, state: &AgentState) -> f64 {
        self.hazard.hazard_value(state)
    }

    pub fn failure_prob(&self, z: f64) -> Result<f64> {
        self.hazard.failure_prob(z)
    }

    pub fn observe(&self, state: &AgentState) -> Observation {
        let mut f = [0.0; MAX_OBS_DIM];
        f[..3].copy_from_slice(&state.position);
        for i in 0..3 {
            f[3 + i] = self.goal[i] - state.position[i];
        }
        f[6] = self.hazard_value(state);
        let dim = match self.kind() {
            EnvKind::Chem => 7,
            EnvKind::Fire => {
                for i in 0..3 {
                    f[7 + i] = state.velocity[i] / FIRE_V_MAX;
                }
                10
            }
        };
        Observation { features: f, dim }
    }

    pub fn reset(&self, episode_id: u64, rng: &mut RngStream) -> (AgentState, Observation) {
        let position = [
            rng.gen::<f64>() * START_BOX,
            rng.gen::<f64>() * START_BOX,
            rng.gen::<f64>() * START_BOX,
        ];
        let state = AgentState {
            position,
            velocity: [0.0; 3],
            steps_elapsed: 0,
            alive: true,
            episode_id,
        };
        (state, self.observe(&state))
    }

    fn advance(&self, state: &AgentState, action: usize) -> AgentState {
        let mut next = *state;
        let dir = action_direction(action);
        match self.kind() {
            EnvKind::Chem => {
                for i in 0..3 {
                    next.position[i] = (state.position[i] + CHEM_STEP * dir[i]).clamp(0.0, 1.0);
                }
            }
            EnvKind::Fire => {
                let mut v = [0.0; 3];
                for i in 0..3 {
                    v[i] = FIRE_DRAG * state.velocity[i] + FIRE_ACCEL * dir[i];
                }
                let speed = norm(&v);
                if speed > FIRE_V_MAX {
                    for c in &mut v {
                        *c *= FIRE_V_MAX / speed;
                    }
                }
                next.velocity = v;
                for i in 0..3 {
                    next.position[i] = (state.position[i] + v[i]).clamp(0.0, 1.0);
                }
            }
        }
        next.steps_elapsed += 1;
        next
    }

    /// Advance one step. The failure draw always consumes exactly one
    /// uniform from `rng`.
    pub fn step(
        &self,
        state: &AgentState,
        action: usize,
        transition_id: u64,
        round: u64,
        rng: &mut RngStream,
    ) -> Result<(AgentState, Transition)> {
        if !state.alive {
            return Err(Error::DeadAgent);
        }
        if action >= N_ACTIONS {
            return Err(Error::InvalidAction {
                action,
                n_actions: N_ACTIONS,
            });
        }
        let obs = self.observe(state);
        let mut next = self.advance(state, action);
        let z_next = self.hazard_value(&next);
        let failed = rng.gen::<f64>() < self.failure_prob(z_next)?;
        let dist_cur = euclidean(&state.position, &self.goal);
        let dist_next = euclidean(&next.position, &self.goal);

        let mut reward = -STEP_COST;
        if self.kind() == EnvKind::Chem {
            reward -= EXPOSURE_WEIGHT * z_next;
        }
        let terminal_kind = if failed {
            reward += REWARD_FAILURE;
            TerminalKind::HazardFailure
        } else if dist_next <= self.success_radius {
            reward += REWARD_SUCCESS;
            TerminalKind::Success
        } else if next.steps_elapsed >= self.horizon {
            TerminalKind::Timeout
        } else {
            TerminalKind::None
        };
        let done = terminal_kind != TerminalKind::None;
        if done {
            next.alive = false;
        }
        let transition = Transition {
            id: transition_id,
            obs,
            action,
            reward,
            next_obs: self.observe(&next),
            done,
            terminal_kind,
            episode_id: state.episode_id,
            hazard_at_next: z_next,
            goal_dist_delta: dist_next - dist_cur,
            round_collected: round,
        };
        Ok((next, transition))
    }
}

pub fn action_direction(action: usize) -> [f64; 3] {
    let mut dir = [0.0; 3];
    if action < STAY_ACTION {
        dir[action / 2] = if action.is_multiple_of(2) { 1.0 } else { -1.0 };
    }
    dir
}

pub fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn epsilon_greedy(policy: &NetworkParams, obs: &Observation, epsilon: f64, rng: &mut RngStream) -> Result<usize> {
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        Ok(rng.gen_range(0..N_ACTIONS))
    } else {
        Ok(greedy_action(&forward(policy, obs.as_slice())?))
    }
}

/// Collect ε-greedy experience until the episode ends or `budget_left`
/// transitions have been produced.
///
/// On termination the returned state is a fresh reset (with a new episode
/// id), otherwise it is the mid-episode state to resume from next round.
#[allow(clippy::too_many_arguments)]
pub fn run_actor_episode_slice(
    env: &Environment,
    state: AgentState,
    policy: &NetworkParams,
    epsilon: f64,
    budget_left: usize,
    round: u64,
    ids: &mut IdSource,
    meter: &mut impl FlightMeter,
    rng: &mut RngStream,
) -> Result<(Vec<Transition>, AgentState)> {
    let mut out = Vec::new();
    let mut state = state;
    while out.len() < budget_left {
        let obs = env.observe(&state);
        let action = epsilon_greedy(policy, &obs, epsilon, rng)?;
        let (next, mut transition) = env.step(&state, action, ids.transition(), round, rng)?;
        let grounded = meter.on_step(action)?;
        if grounded && !transition.done {
            transition.done = true;
            transition.terminal_kind = TerminalKind::EnergyDepleted;
        }
        let done = transition.done;
        out.push(transition);
        if done {
            let (fresh, _) = env.reset(ids.episode(), rng);
            return Ok((out, fresh));
        }
        state = next;
    }
    Ok((out, state))
}

/// Episode outcome joined onto transitions for post-hoc analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub terminal: TerminalKind,
    pub final_goal_distance: f64,
}

impl EpisodeOutcome {
    pub fn from_terminal(t: &Transition) -> Option<Self> {
        t.done.then(|| EpisodeOutcome {
            terminal: t.terminal_kind,
            final_goal_distance: t.next_obs.goal_distance(),
        })
    }
}

pub const TRAJECTORY_HEADER: &str = "id,episode_id,round,action,reward,done,terminal_kind,hazard_at_next";

pub fn write_trajectory_line(w: &mut impl Write, t: &Transition) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        t.id,
        t.episode_id,
        t.round_collected,
        t.action,
        t.reward,
        t.done as u8,
        t.terminal_kind.as_str(),
        t.hazard_at_next
    )
}
