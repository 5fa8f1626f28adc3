//! Experiment configuration.
//!
//! The on-disk format is flat `key = value` text, one key per line. Blank
//! lines and lines starting with `#` are ignored, trailing `# ...` comments
//! are stripped. Keys are grouped with dotted prefixes (`per.alpha`,
//! `net.hidden_dims`, ...). Every key is optional; omitted keys take the
//! defaults listed in [`ExperimentConfig::default`]. Unknown keys are
//! rejected. List values are comma-separated (`net.hidden_dims = 64,64`).
//!
//! The environment variable `EC_HFRL_SEED` overrides `master_seed` when set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::energy::EnergyParams;
use crate::error::{Error, Result};

pub const SEED_ENV_VAR: &str = "EC_HFRL_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Chem,
    Fire,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Chem => 7,
            EnvKind::Fire => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Chem => "chem",
            EnvKind::Fire => "fire",
        }
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "chem" | "pd-chem" => Ok(EnvKind::Chem),
            "fire" | "sd-fire" => Ok(EnvKind::Fire),
            other => Err(format!("unknown environment `{other}` (expected chem|fire)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReplayMode {
    Prioritized,
    Uniform,
}

impl ReplayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplayMode::Prioritized => "per",
            ReplayMode::Uniform => "uniform",
        }
    }
}

impl FromStr for ReplayMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "per" | "prioritized" => Ok(ReplayMode::Prioritized),
            "uniform" => Ok(ReplayMode::Uniform),
            other => Err(format!("unknown replay mode `{other}` (expected per|uniform)")),
        }
    }
}

/// How the high-TD replay subset is ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopRanking {
    /// Inclusion frequency under repeated resampling.
    Frequency,
    /// Current sampling priority.
    Priority,
}

impl TopRanking {
    pub fn as_str(self) -> &'static str {
        match self {
            TopRanking::Frequency => "frequency",
            TopRanking::Priority => "priority",
        }
    }
}

impl FromStr for TopRanking {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "frequency" => Ok(TopRanking::Frequency),
            "priority" => Ok(TopRanking::Priority),
            other => Err(format!("unknown ranking `{other}` (expected frequency|priority)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerParams {
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_epsilon: f64,
    pub capacity: usize,
}

impl Default for PerParams {
    fn default() -> Self {
        PerParams {
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_epsilon: 1e-6,
            capacity: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_actions: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_rounds: u64,
    /// Goal-distance potential coefficient added to TD targets; 0 disables it.
    pub goal_shaping: f64,
}

impl NetSpec {
    pub fn for_env(kind: EnvKind) -> Self {
        NetSpec {
            input_dim: kind.obs_dim(),
            ..NetSpec::default()
        }
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.n_actions);
        dims
    }
}

impl NetSpec {
    pub fn td_target(&self) -> crate::approximator::TdTarget {
        crate::approximator::TdTarget {
            discount: self.discount,
            goal_shaping: self.goal_shaping,
        }
    }
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            input_dim: EnvKind::Chem.obs_dim(),
            hidden_dims: vec![64, 64],
            n_actions: crate::environment::N_ACTIONS,
            discount: 0.99,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_rounds: 150,
            goal_shaping: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagParams {
    pub top_p_percent: f64,
    pub resample_count: usize,
    pub stage_success_threshold: f64,
    pub near_success_radius: f64,
    pub hazard_margin: f64,
    pub goal_margin: f64,
    /// Failure-proximity radius as a multiple of the plume width.
    pub failure_radius_sigmas: f64,
    pub ranking: TopRanking,
}

impl Default for DiagParams {
    fn default() -> Self {
        DiagParams {
            top_p_percent: 5.0,
            resample_count: 100,
            stage_success_threshold: 0.5,
            near_success_radius: 0.1,
            hazard_margin: 0.01,
            goal_margin: 0.0,
            failure_radius_sigmas: 2.0,
            ranking: TopRanking::Frequency,
        }
    }
}

/// Hazard and episode constants of the navigation tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct HazardParams {
    pub sigma: f64,
    pub f_max: f64,
    pub v_safe: f64,
    pub horizon: u32,
}

impl Default for HazardParams {
    fn default() -> Self {
        HazardParams {
            sigma: 0.15,
            f_max: 0.05,
            v_safe: 0.05,
            horizon: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env_kind: EnvKind,
    pub n_agents: usize,
    pub n_clusters: usize,
    pub learners_per_cluster: usize,
    pub minibatch_size: usize,
    pub actors_per_cluster: usize,
    pub experience_budget_per_round: usize,
    pub rounds: u64,
    pub local_steps_per_learner: usize,
    pub global_sync_period: u64,
    pub target_sync_period: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub master_seed: u64,
    pub replay: ReplayMode,
    pub strict_energy: bool,
    /// Union over every local step instead of the first step per learner.
    pub ucr_all_steps: bool,
    pub dump_trajectories: bool,
    pub per_params: PerParams,
    pub net_spec: NetSpec,
    pub energy_params: EnergyParams,
    pub diag_params: DiagParams,
    pub hazard: HazardParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env_kind: EnvKind::Chem,
            n_agents: 16,
            n_clusters: 2,
            learners_per_cluster: 4,
            minibatch_size: 32,
            actors_per_cluster: 2,
            experience_budget_per_round: 200,
            rounds: 300,
            local_steps_per_learner: 1,
            global_sync_period: 1,
            target_sync_period: 10,
            eval_period: 10,
            eval_episodes: 50,
            master_seed: 0,
            replay: ReplayMode::Prioritized,
            strict_energy: false,
            ucr_all_steps: false,
            dump_trajectories: false,
            per_params: PerParams::default(),
            net_spec: NetSpec::default(),
            energy_params: EnergyParams::default(),
            diag_params: DiagParams::default(),
            hazard: HazardParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn cluster_size(&self) -> usize {
        self.n_agents / self.n_clusters.max(1)
    }

    /// Importance-sampling exponent, annealed linearly over the run.
    pub fn beta_at(&self, round: u64) -> f64 {
        crate::numeric::linear_schedule(
            self.per_params.beta_start,
            self.per_params.beta_end,
            round,
            self.rounds.saturating_sub(1),
        )
    }

    pub fn epsilon_at(&self, round: u64) -> f64 {
        let n = &self.net_spec;
        crate::numeric::linear_schedule(n.epsilon_start, n.epsilon_end, round, n.epsilon_decay_rounds)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::invalid(field, format!("{field} must be ≥ 1")))
            } else {
                Ok(())
            }
        };
        positive("n_agents", self.n_agents)?;
        positive("n_clusters", self.n_clusters)?;
        positive("learners_per_cluster", self.learners_per_cluster)?;
        positive("minibatch_size", self.minibatch_size)?;
        positive("actors_per_cluster", self.actors_per_cluster)?;
        positive("experience_budget", self.experience_budget_per_round)?;
        positive("local_steps", self.local_steps_per_learner)?;
        positive("eval_episodes", self.eval_episodes)?;
        positive("per.capacity", self.per_params.capacity)?;
        positive("diag.resample_count", self.diag_params.resample_count)?;
        for (field, v) in [
            ("global_sync_period", self.global_sync_period),
            ("target_sync_period", self.target_sync_period),
            ("eval_period", self.eval_period),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, format!("{field} must be ≥ 1")));
            }
        }
        if !self.n_agents.is_multiple_of(self.n_clusters) {
            return Err(Error::invalid(
                "n_agents",
                format!(
                    "n_agents ({}) must be divisible by n_clusters ({})",
                    self.n_agents, self.n_clusters
                ),
            ));
        }
        let size = self.cluster_size();
        if self.learners_per_cluster > size {
            return Err(Error::invalid(
                "learners_per_cluster",
                format!(
                    "learners_per_cluster ({}) exceeds cluster size {size}",
                    self.learners_per_cluster
                ),
            ));
        }
        if self.actors_per_cluster > size {
            return Err(Error::invalid(
                "actors_per_cluster",
                format!("actors_per_cluster ({}) exceeds cluster size {size}", self.actors_per_cluster),
            ));
        }
        let (cap, budget, b) = (
            self.per_params.capacity,
            self.experience_budget_per_round,
            self.minibatch_size,
        );
        if !(cap >= budget && budget >= b) {
            return Err(Error::invalid(
                "per.capacity",
                format!("capacity ≥ B ≥ b violated (capacity={cap}, B={budget}, b={b})"),
            ));
        }

        let p = &self.per_params;
        if !(0.0..=1.0).contains(&p.alpha) {
            return Err(Error::invalid("per.alpha", "alpha must lie in [0, 1]"));
        }
        if !(0.0 <= p.beta_start && p.beta_start <= p.beta_end && p.beta_end <= 1.0) {
            return Err(Error::invalid("per.beta_start", "0 ≤ beta_start ≤ beta_end ≤ 1 violated"));
        }
        if !(p.priority_epsilon > 0.0 && p.priority_epsilon.is_finite()) {
            return Err(Error::invalid("per.priority_epsilon", "priority_epsilon must be > 0"));
        }

        let n = &self.net_spec;
        if n.input_dim != self.env_kind.obs_dim() {
            return Err(Error::invalid(
                "net.input_dim",
                format!(
                    "input_dim {} does not match the {} observation dimension {}",
                    n.input_dim,
                    self.env_kind.as_str(),
                    self.env_kind.obs_dim()
                ),
            ));
        }
        if n.n_actions != crate::environment::N_ACTIONS {
            return Err(Error::invalid(
                "net.n_actions",
                format!("n_actions must be {}", crate::environment::N_ACTIONS),
            ));
        }
        if n.hidden_dims.contains(&0) {
            return Err(Error::invalid("net.hidden_dims", "hidden widths must be ≥ 1"));
        }
        if !(n.discount > 0.0 && n.discount < 1.0) {
            return Err(Error::invalid("net.discount", "discount must lie in (0, 1)"));
        }
        if !(n.goal_shaping.is_finite() && n.goal_shaping >= 0.0) {
            return Err(Error::invalid("net.goal_shaping", "shaping coefficient must be finite and ≥ 0"));
        }
        if !(n.learning_rate > 0.0 && n.learning_rate.is_finite()) {
            return Err(Error::invalid("net.learning_rate", "learning_rate must be > 0"));
        }
        for (field, v) in [("net.epsilon_start", n.epsilon_start), ("net.epsilon_end", n.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(field, "exploration rate must lie in [0, 1]"));
            }
        }

        self.energy_params.validate()?;

        let d = &self.diag_params;
        if !(d.top_p_percent > 0.0 && d.top_p_percent <= 100.0) {
            return Err(Error::invalid("diag.top_p_percent", "top_p_percent must lie in (0, 100]"));
        }
        if !(0.0..=1.0).contains(&d.stage_success_threshold) {
            return Err(Error::invalid(
                "diag.stage_success_threshold",
                "stage_success_threshold must lie in [0, 1]",
            ));
        }
        for (field, v) in [
            ("diag.near_success_radius", d.near_success_radius),
            ("diag.hazard_margin", d.hazard_margin),
            ("diag.goal_margin", d.goal_margin),
            ("diag.failure_radius_sigmas", d.failure_radius_sigmas),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be a finite nonnegative number"));
            }
        }

        let h = &self.hazard;
        if !(h.f_max > 0.0 && h.f_max < 1.0) {
            return Err(Error::invalid("hazard.f_max", "f_max must lie in (0, 1)"));
        }
        if !(h.sigma > 0.0 && h.sigma.is_finite()) {
            return Err(Error::invalid("hazard.sigma", "sigma must be > 0"));
        }
        if !(h.v_safe > 0.0 && h.v_safe.is_finite()) {
            return Err(Error::invalid("hazard.v_safe", "v_safe must be > 0"));
        }
        if h.horizon == 0 {
            return Err(Error::invalid("hazard.horizon", "horizon must be ≥ 1"));
        }
        Ok(())
    }

    /// Parse config text, fill defaults and validate.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = scan(text)?;
        let mut cfg = ExperimentConfig::default();
        let mut input_dim: Option<usize> = None;
        for (key, (line, value)) in &entries {
            apply(&mut cfg, &mut input_dim, key, value).map_err(|message| Error::ConfigParse {
                line: *line,
                message: format!("`{key}`: {message}"),
            })?;
        }
        cfg.net_spec.input_dim = input_dim.unwrap_or_else(|| cfg.env_kind.obs_dim());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render every key in canonical order. `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env_kind.as_str().into());
        kv("n_agents", self.n_agents.to_string());
        kv("n_clusters", self.n_clusters.to_string());
        kv("learners_per_cluster", self.learners_per_cluster.to_string());
        kv("minibatch_size", self.minibatch_size.to_string());
        kv("actors_per_cluster", self.actors_per_cluster.to_string());
        kv("experience_budget", self.experience_budget_per_round.to_string());
        kv("rounds", self.rounds.to_string());
        kv("local_steps", self.local_steps_per_learner.to_string());
        kv("global_sync_period", self.global_sync_period.to_string());
        kv("target_sync_period", self.target_sync_period.to_string());
        kv("eval_period", self.eval_period.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("replay", self.replay.as_str().into());
        kv("strict_energy", self.strict_energy.to_string());
        kv("ucr_all_steps", self.ucr_all_steps.to_string());
        kv("dump_trajectories", self.dump_trajectories.to_string());
        let p = &self.per_params;
        kv("per.alpha", p.alpha.to_string());
        kv("per.beta_start", p.beta_start.to_string());
        kv("per.beta_end", p.beta_end.to_string());
        kv("per.priority_epsilon", p.priority_epsilon.to_string());
        kv("per.capacity", p.capacity.to_string());
        let n = &self.net_spec;
        kv("net.input_dim", n.input_dim.to_string());
        kv(
            "net.hidden_dims",
            n.hidden_dims.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("net.n_actions", n.n_actions.to_string());
        kv("net.discount", n.discount.to_string());
        kv("net.learning_rate", n.learning_rate.to_string());
        kv("net.epsilon_start", n.epsilon_start.to_string());
        kv("net.epsilon_end", n.epsilon_end.to_string());
        kv("net.epsilon_decay_rounds", n.epsilon_decay_rounds.to_string());
        kv("net.goal_shaping", n.goal_shaping.to_string());
        let e = &self.energy_params;
        kv("energy.e_init", e.e_init.to_string());
        kv("energy.e_fly_move", e.e_fly_move.to_string());
        kv("energy.e_fly_stay", e.e_fly_stay.to_string());
        kv("energy.e_train", e.e_train.to_string());
        kv("energy.e_comm", e.e_comm.to_string());
        kv("energy.e_agg_per_upload", e.e_agg_per_upload.to_string());
        let d = &self.diag_params;
        kv("diag.top_p_percent", d.top_p_percent.to_string());
        kv("diag.resample_count", d.resample_count.to_string());
        kv("diag.stage_success_threshold", d.stage_success_threshold.to_string());
        kv("diag.near_success_radius", d.near_success_radius.to_string());
        kv("diag.hazard_margin", d.hazard_margin.to_string());
        kv("diag.goal_margin", d.goal_margin.to_string());
        kv("diag.failure_radius_sigmas", d.failure_radius_sigmas.to_string());
        kv("diag.ranking", d.ranking.as_str().into());
        let h = &self.hazard;
        kv("hazard.sigma", h.sigma.to_string());
        kv("hazard.f_max", h.f_max.to_string());
        kv("hazard.v_safe", h.v_safe.to_string());
        kv("hazard.horizon", h.horizon.to_string());
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hash_u64(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(bytes)
    }
}

/// Read, parse and validate a config file, then apply the seed override.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    apply_seed_override(&mut cfg, std::env::var(SEED_ENV_VAR).ok().as_deref())?;
    Ok(cfg)
}

pub fn apply_seed_override(cfg: &mut ExperimentConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        cfg.master_seed = v.trim().parse().map_err(|_| {
            Error::invalid("master_seed", format!("{SEED_ENV_VAR}=`{v}` is not a 64-bit integer"))
        })?;
    }
    Ok(())
}

fn scan(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigParse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: "empty key".into(),
            });
        }
        if let Some((first, _)) = entries.insert(key.clone(), (line, value.trim().to_string())) {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key `{key}` (first set on line {first})"),
            });
        }
    }
    Ok(entries)
}

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse `{value}` as {}", std::any::type_name::<T>()))
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("cannot parse `{value}` as a boolean")),
    }
}

fn apply(
    cfg: &mut ExperimentConfig,
    input_dim: &mut Option<usize>,
    key: &str,
    value: &str,
) -> std::result::Result<(), String> {
    match key {
        "env" => cfg.env_kind = value.parse()?,
        "n_agents" => cfg.n_agents = num(value)?,
        "n_clusters" => cfg.n_clusters = num(value)?,
        "learners_per_cluster" => cfg.learners_per_cluster = num(value)?,
        "minibatch_size" => cfg.minibatch_size = num(value)?,
        "actors_per_cluster" => cfg.actors_per_cluster = num(value)?,
        "experience_budget" => cfg.experience_budget_per_round = num(value)?,
        "rounds" => cfg.rounds = num(value)?,
        "local_steps" => cfg.local_steps_per_learner = num(value)?,
        "global_sync_period" => cfg.global_sync_period = num(value)?,
        "target_sync_period" => cfg.target_sync_period = num(value)?,
        "eval_period" => cfg.eval_period = num(value)?,
        "eval_episodes" => cfg.eval_episodes = num(value)?,
        "master_seed" => cfg.master_seed = num(value)?,
        "replay" => cfg.replay = value.parse()?,
        "strict_energy" => cfg.strict_energy = boolean(value)?,
        "ucr_all_steps" => cfg.ucr_all_steps = boolean(value)?,
        "dump_trajectories" => cfg.dump_trajectories = boolean(value)?,
        "per.alpha" => cfg.per_params.alpha = num(value)?,
        "per.beta_start" => cfg.per_params.beta_start = num(value)?,
        "per.beta_end" => cfg.per_params.beta_end = num(value)?,
        "per.priority_epsilon" => cfg.per_params.priority_epsilon = num(value)?,
        "per.capacity" => cfg.per_params.capacity = num(value)?,
        "net.input_dim" => *input_dim = Some(num(value)?),
        "net.hidden_dims" => {
            cfg.net_spec.hidden_dims = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|v| num(v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
        }
        "net.n_actions" => cfg.net_spec.n_actions = num(value)?,
        "net.discount" => cfg.net_spec.discount = num(value)?,
        "net.goal_shaping" => cfg.net_spec.goal_shaping = num(value)?,
        "net.learning_rate" => cfg.net_spec.learning_rate = num(value)?,
        "net.epsilon_start" => cfg.net_spec.epsilon_start = num(value)?,
        "net.epsilon_end" => cfg.net_spec.epsilon_end = num(value)?,
        "net.epsilon_decay_rounds" => cfg.net_spec.epsilon_decay_rounds = num(value)?,
        "energy.e_init" => cfg.energy_params.e_init = num(value)?,
        "energy.e_fly_move" => cfg.energy_params.e_fly_move = num(value)?,
        "energy.e_fly_stay" => cfg.energy_params.e_fly_stay = num(value)?,
        "energy.e_train" => cfg.energy_params.e_train = num(value)?,
        "energy.e_comm" => cfg.energy_params.e_comm = num(value)?,
        "energy.e_agg_per_upload" => cfg.energy_params.e_agg_per_upload = num(value)?,
        "diag.top_p_percent" => cfg.diag_params.top_p_percent = num(value)?,
        "diag.resample_count" => cfg.diag_params.resample_count = num(value)?,
        "diag.stage_success_threshold" => cfg.diag_params.stage_success_threshold = num(value)?,
        "diag.near_success_radius" => cfg.diag_params.near_success_radius = num(value)?,
        "diag.hazard_margin" => cfg.diag_params.hazard_margin = num(value)?,
        "diag.goal_margin" => cfg.diag_params.goal_margin = num(value)?,
        "diag.failure_radius_sigmas" => cfg.diag_params.failure_radius_sigmas = num(value)?,
        "diag.ranking" => cfg.diag_params.ranking = value.parse()?,
        "hazard.sigma" => cfg.hazard.sigma = num(value)?,
        "hazard.f_max" => cfg.hazard.f_max = num(value)?,
        "hazard.v_safe" => cfg.hazard.v_safe = num(value)?,
        "hazard.horizon" => cfg.hazard.horizon = num(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = ExperimentConfig::parse("env = fire\n").unwrap();
        assert_eq!(cfg.env_kind, EnvKind::Fire);
        assert_eq!(cfg.net_spec.input_dim, 10);
        assert_eq!(cfg.per_params, PerParams::default());
        assert_eq!(cfg.experience_budget_per_round, 200);
        assert_eq!(cfg.eval_episodes, 50);
        let empty = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(empty, ExperimentConfig::default());
    }

    #[test]
    fn zero_learners_rejected() {
        let err = ExperimentConfig::parse("learners_per_cluster = 0").unwrap_err();
        assert!(err.to_string().contains("learners_per_cluster must be ≥ 1"), "{err}");
    }

    #[test]
    fn capacity_chain_rejected() {
        let err = ExperimentConfig::parse("minibatch_size = 512\nper.capacity = 256").unwrap_err();
        assert!(err.to_string().contains("capacity ≥ B ≥ b violated"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = ExperimentConfig::parse("n_agents = 16\nbogus = 3\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let err = ExperimentConfig::parse("\n\nn_agents = sixteen").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 3, .. }));
        let err = ExperimentConfig::parse("rounds 10").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 1, .. }));
    }

    #[test]
    fn cluster_divisibility_and_k_bound() {
        assert!(ExperimentConfig::parse("n_agents = 15").is_err());
        let err = ExperimentConfig::parse("learners_per_cluster = 9").unwrap_err();
        assert!(err.to_string().contains("learners_per_cluster"), "{err}");
    }

    #[test]
    fn mismatched_input_dim_rejected() {
        let err = ExperimentConfig::parse("env = fire\nnet.input_dim = 7").unwrap_err();
        assert!(err.to_string().contains("net.input_dim"));
    }

    #[test]
    fn seed_override() {
        let mut cfg = ExperimentConfig::default();
        apply_seed_override(&mut cfg, Some("77")).unwrap();
        assert_eq!(cfg.master_seed, 77);
        assert!(apply_seed_override(&mut cfg, Some("x")).is_err());
        apply_seed_override(&mut cfg, None).unwrap();
        assert_eq!(cfg.master_seed, 77);
    }

    #[test]
    fn schedules() {
        let cfg = ExperimentConfig {
            rounds: 11,
            ..Default::default()
        };
        assert_eq!(cfg.beta_at(0), 0.4);
        assert_eq!(cfg.beta_at(10), 1.0);
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert_eq!(cfg.epsilon_at(10_000), 0.05);
    }

    proptest! {
        #[test]
        fn text_round_trip(
            fire in any::<bool>(),
            c in 1usize..4,
            per_cluster in 1usize..9,
            k_frac in 0.0f64..1.0,
            b in 1usize..64,
            extra in 0usize..500,
            alpha in 0.0f64..=1.0,
            lr in 1e-5f64..1e-1,
            seed in any::<u64>(),
            hidden in proptest::collection::vec(1usize..128, 0..3),
        ) {
            let mut cfg = ExperimentConfig {
                env_kind: if fire { EnvKind::Fire } else { EnvKind::Chem },
                n_clusters: c,
                n_agents: c * per_cluster,
                learners_per_cluster: 1 + ((per_cluster - 1) as f64 * k_frac) as usize,
                actors_per_cluster: 1,
                minibatch_size: b,
                experience_budget_per_round: b + extra,
                master_seed: seed,
                ..Default::default()
            };
            cfg.per_params.alpha = alpha;
            cfg.per_params.capacity = b + extra + 10;
            cfg.net_spec.learning_rate = lr;
            cfg.net_spec.hidden_dims = hidden;
            cfg.net_spec.input_dim = cfg.env_kind.obs_dim();
            cfg.validate().unwrap();
            let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
