//! Per-agent energy ledger.
//!
//! Residual energy evolves as
//! `e[t+1] = e[t] - 1{flying} * E_fly(a) - 1{learner} * E_learn`, with
//! `E_learn = E_train + E_comm + E_agg` where the aggregation share is
//! charged to the cluster head once per received model.
//!
//! All amounts are held as integer micro-units so that the conservation
//! identity `sum(e_init - residual) == fly + train + comm + agg` is exact.
//! A charge larger than the remaining residual drains the agent to zero; the
//! unpaid part is tracked separately as `unmet` and never enters the totals.

use std::collections::{BTreeMap, BTreeSet};

use crate::environment::STAY_ACTION;
use crate::error::{Error, Result};

pub type AgentId = usize;

pub const MICRO_PER_UNIT: f64 = 1_000_000.0;

pub fn to_micro(units: f64) -> u64 {
    (units * MICRO_PER_UNIT).round() as u64
}

pub fn from_micro(micro: u64) -> f64 {
    micro as f64 / MICRO_PER_UNIT
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub e_init: f64,
    pub e_fly_move: f64,
    pub e_fly_stay: f64,
    pub e_train: f64,
    pub e_comm: f64,
    pub e_agg_per_upload: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_init: 500.0,
            e_fly_move: 1.0,
            e_fly_stay: 0.2,
            e_train: 0.5,
            e_comm: 0.3,
            e_agg_per_upload: 0.1,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("energy.e_fly_move", self.e_fly_move),
            ("energy.e_fly_stay", self.e_fly_stay),
            ("energy.e_train", self.e_train),
            ("energy.e_comm", self.e_comm),
            ("energy.e_agg_per_upload", self.e_agg_per_upload),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "energy costs must be finite and nonnegative"));
            }
        }
        if !(self.e_init > 0.0 && self.e_init.is_finite()) {
            return Err(Error::invalid("energy.e_init", "e_init must be > 0"));
        }
        Ok(())
    }

    /// Learning cost of one round with `k` learners, in micro-units.
    pub fn learning_round_micro(&self, k: usize) -> u64 {
        k as u64 * (to_micro(self.e_train) + to_micro(self.e_comm) + to_micro(self.e_agg_per_upload))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnergyTotals {
    pub fly: u64,
    pub train: u64,
    pub comm: u64,
    pub agg: u64,
    pub unmet: u64,
}

impl EnergyTotals {
    pub fn total(&self) -> u64 {
        self.fly + self.train + self.comm + self.agg
    }

    pub fn learning(&self) -> u64 {
        self.train + self.comm + self.agg
    }

    pub fn add(&mut self, other: &EnergyTotals) {
        self.fly += other.fly;
        self.train += other.train;
        self.comm += other.comm;
        self.agg += other.agg;
        self.unmet += other.unmet;
    }

    pub fn report(&self) -> EnergyReport {
        EnergyReport {
            fly: from_micro(self.fly),
            train: from_micro(self.train),
            comm: from_micro(self.comm),
            agg: from_micro(self.agg),
            total: from_micro(self.total()),
            unmet: from_micro(self.unmet),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub fly: f64,
    pub train: f64,
    pub comm: f64,
    pub agg: f64,
    pub total: f64,
    pub unmet: f64,
}

#[derive(Clone, Copy)]
enum Bucket {
    Fly,
    Train,
    Comm,
    Agg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyLedger {
    e_init: u64,
    residual: BTreeMap<AgentId, u64>,
    depleted: BTreeSet<AgentId>,
    totals: EnergyTotals,
}

impl EnergyLedger {
    pub fn new(agents: impl IntoIterator<Item = AgentId>, params: &EnergyParams) -> Self {
        let e_init = to_micro(params.e_init);
        EnergyLedger {
            e_init,
            residual: agents.into_iter().map(|a| (a, e_init)).collect(),
            depleted: BTreeSet::new(),
            totals: EnergyTotals::default(),
        }
    }

    pub fn residual(&self, agent: AgentId) -> Result<f64> {
        self.residual_micro(agent).map(from_micro)
    }

    pub fn residual_micro(&self, agent: AgentId) -> Result<u64> {
        self.residual.get(&agent).copied().ok_or(Error::UnknownAgent(agent))
    }

    pub fn is_depleted(&self, agent: AgentId) -> bool {
        self.depleted.contains(&agent)
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.residual.keys().copied()
    }

    pub fn totals(&self) -> EnergyTotals {
        self.totals
    }

    /// `sum over agents of (e_init - residual)`, in micro-units.
    pub fn drawdown_micro(&self) -> u64 {
        self.residual.values().map(|r| self.e_init - r).sum()
    }

    fn debit(&mut self, agent: AgentId, amount: u64, bucket: Bucket) -> Result<bool> {
        let residual = self.residual.get_mut(&agent).ok_or(Error::UnknownAgent(agent))?;
        let paid = amount.min(*residual);
        *residual -= paid;
        let empty = *residual == 0;
        let slot = match bucket {
            Bucket::Fly => &mut self.totals.fly,
            Bucket::Train => &mut self.totals.train,
            Bucket::Comm => &mut self.totals.comm,
            Bucket::Agg => &mut self.totals.agg,
        };
        *slot += paid;
        self.totals.unmet += amount - paid;
        if empty && amount > 0 {
            self.depleted.insert(agent);
        }
        Ok(self.depleted.contains(&agent))
    }

    /// Charge one flight step. Returns whether the agent is now depleted.
    pub fn charge_fly(&mut self, agent: AgentId, action: usize, params: &EnergyParams) -> Result<bool> {
        let cost = if action == STAY_ACTION {
            params.e_fly_stay
        } else {
            params.e_fly_move
        };
        self.debit(agent, to_micro(cost), Bucket::Fly)
    }

    /// Charge train + comm to every learner and the per-upload aggregation
    /// cost to the cluster head.
    pub fn charge_learning_round(&mut self, learners: &[AgentId], ch: AgentId, params: &EnergyParams) -> Result<()> {
        if learners.is_empty() {
            return Ok(());
        }
        // validate ids up front so a bad id leaves the ledger untouched
        for &a in learners.iter().chain(std::iter::once(&ch)) {
            self.residual_micro(a)?;
        }
        let (train, comm, agg) = (
            to_micro(params.e_train),
            to_micro(params.e_comm),
            to_micro(params.e_agg_per_upload),
        );
        for &a in learners {
            self.debit(a, train, Bucket::Train)?;
            self.debit(a, comm, Bucket::Comm)?;
        }
        self.debit(ch, agg * learners.len() as u64, Bucket::Agg)?;
        Ok(())
    }

    pub fn round_energy_report(&self) -> EnergyReport {
        self.totals.report()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EnergyParams {
        EnergyParams {
            e_init: 100.0,
            ..Default::default()
        }
    }

    #[test]
    fn fly_costs() {
        let p = params();
        let mut l = EnergyLedger::new([0, 1], &p);
        assert!(!l.charge_fly(0, 0, &p).unwrap());
        assert_eq!(l.residual(0).unwrap(), 99.0);
        l.charge_fly(1, STAY_ACTION, &p).unwrap();
        assert_eq!(l.residual(1).unwrap(), 99.8);
        let r = l.round_energy_report();
        assert_eq!(r.fly, 1.2);
        assert_eq!(r.total, 1.2);
    }

    #[test]
    fn depletion_clamps_to_zero() {
        let p = EnergyParams {
            e_init: 0.5,
            ..Default::default()
        };
        let mut l = EnergyLedger::new([3], &p);
        assert!(l.charge_fly(3, 1, &p).unwrap());
        assert_eq!(l.residual(3).unwrap(), 0.0);
        assert!(l.is_depleted(3));
        let t = l.totals();
        assert_eq!(t.fly, to_micro(0.5));
        assert_eq!(t.unmet, to_micro(0.5));
        assert_eq!(l.drawdown_micro(), t.total());
    }

    #[test]
    fn unknown_agent() {
        let p = params();
        let mut l = EnergyLedger::new([0], &p);
        assert!(matches!(l.charge_fly(5, 0, &p), Err(Error::UnknownAgent(5))));
        let before = l.clone();
        assert!(l.charge_learning_round(&[0, 9], 0, &p).is_err());
        assert_eq!(l, before);
    }

    #[test]
    fn learning_round_decomposition() {
        let p = params();
        let mut l = EnergyLedger::new(0..8, &p);
        l.charge_learning_round(&[0, 1, 2, 3], 4, &p).unwrap();
        for a in 0..4 {
            assert_eq!(l.residual_micro(a).unwrap(), to_micro(100.0) - to_micro(0.8));
        }
        assert_eq!(l.residual_micro(4).unwrap(), to_micro(100.0) - 4 * to_micro(0.1));
        assert_eq!(l.totals().learning(), p.learning_round_micro(4));
    }

    #[test]
    fn learner_can_be_cluster_head() {
        let p = params();
        let mut l = EnergyLedger::new(0..2, &p);
        l.charge_learning_round(&[0, 1], 0, &p).unwrap();
        assert_eq!(
            l.residual_micro(0).unwrap(),
            to_micro(100.0) - to_micro(0.8) - 2 * to_micro(0.1)
        );
        assert_eq!(l.drawdown_micro(), l.totals().total());
    }

    #[test]
    fn empty_learner_set_is_noop() {
        let p = params();
        let mut l = EnergyLedger::new(0..4, &p);
        let before = l.clone();
        l.charge_learning_round(&[], 0, &p).unwrap();
        assert_eq!(l, before);
    }

    #[test]
    fn doubling_k_doubles_learning_cost() {
        let p = params();
        let mut a = EnergyLedger::new(0..16, &p);
        let mut b = EnergyLedger::new(0..16, &p);
        a.charge_learning_round(&[0, 1, 2], 15, &p).unwrap();
        b.charge_learning_round(&[0, 1, 2, 3, 4, 5], 15, &p).unwrap();
        assert_eq!(2 * a.totals().learning(), b.totals().learning());
    }

    #[test]
    fn fresh_ledger_reports_zero() {
        let l = EnergyLedger::new(0..3, &params());
        assert_eq!(l.round_energy_report(), EnergyReport::default());
    }
}
