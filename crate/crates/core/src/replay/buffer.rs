use std::collections::HashMap;

use rand::Rng;

use super::SumTree;
use crate::config::{PerParams, ReplayMode};
use crate::environment::Transition;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One learner's minibatch draw.
#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchSample {
    pub ids: Vec<u64>,
    pub slots: Vec<usize>,
    /// Importance weights, normalized so the largest in the batch is 1.
    pub weights: Vec<f64>,
    /// Sampling priorities (tree leaf values) at draw time.
    pub priorities: Vec<f64>,
}

impl MinibatchSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl AsRef<[u64]> for MinibatchSample {
    fn as_ref(&self) -> &[u64] {
        &self.ids
    }
}

/// Fixed-capacity FIFO store with proportional priority sampling.
///
/// Tree leaves hold `priority^alpha`. New entries enter at the largest raw
/// priority seen so far. In [`ReplayMode::Uniform`] the exponent is forced
/// to zero, so every live entry carries leaf value 1 and sampling reduces to
/// stratified uniform draws with unit importance weights.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Option<Transition>>,
    tree: SumTree,
    next_slot: usize,
    len: usize,
    max_priority: f64,
    alpha: f64,
    priority_epsilon: f64,
    mode: ReplayMode,
    slot_of: HashMap<u64, usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, priority_epsilon: f64, mode: ReplayMode) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            slots: vec![None; capacity],
            tree: SumTree::new(capacity),
            next_slot: 0,
            len: 0,
            max_priority: 1.0,
            alpha,
            priority_epsilon,
            mode,
            slot_of: HashMap::with_capacity(capacity),
        }
    }

    pub fn from_params(per: &PerParams, mode: ReplayMode) -> Self {
        ReplayBuffer::new(per.capacity, per.alpha, per.priority_epsilon, mode)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn priority_epsilon(&self) -> f64 {
        self.priority_epsilon
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn next_slot(&self) -> usize {
        self.next_slot
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    fn exponent(&self) -> f64 {
        match self.mode {
            ReplayMode::Prioritized => self.alpha,
            ReplayMode::Uniform => 0.0,
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slot_of.contains_key(&id)
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn get_by_id(&self, id: u64) -> Option<&Transition> {
        self.slot_of.get(&id).and_then(|&s| self.get(s))
    }

    pub fn slot_of(&self, id: u64) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    /// Leaf value (sampling priority) of a live id.
    pub fn priority(&self, id: u64) -> Option<f64> {
        self.slot_of.get(&id).map(|&s| self.tree.get(s))
    }

    pub fn priority_at_slot(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    /// Live transitions in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Transition)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|t| (i, t)))
    }

    pub fn live_ids(&self) -> Vec<u64> {
        self.iter().map(|(_, t)| t.id).collect()
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.tree.leaf_values()[..self.capacity]
    }

    /// Insert at the current maximum priority, evicting the oldest entry
    /// when full.
    pub fn push(&mut self, t: Transition) -> Result<u64> {
        if self.slot_of.contains_key(&t.id) {
            return Err(Error::DuplicateTransition(t.id));
        }
        let slot = self.next_slot;
        if let Some(old) = self.slots[slot].take() {
            self.slot_of.remove(&old.id);
        } else {
            self.len += 1;
        }
        let id = t.id;
        self.slot_of.insert(id, slot);
        self.slots[slot] = Some(t);
        self.tree.set(slot, self.max_priority.powf(self.exponent()));
        self.next_slot = (slot + 1) % self.capacity;
        Ok(id)
    }

    /// Stratified proportional sampling: the priority mass is cut into `b`
    /// equal segments and one point is drawn uniformly inside each.
    pub fn sample(&self, b: usize, beta: f64, rng: &mut RngStream) -> Result<MinibatchSample> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        if b == 0 {
            return Err(Error::Empty("minibatch size"));
        }
        let total = self.tree.total();
        let segment = total / b as f64;
        let n_live = self.len as f64;
        let mut out = MinibatchSample {
            ids: Vec::with_capacity(b),
            slots: Vec::with_capacity(b),
            weights: Vec::with_capacity(b),
            priorities: Vec::with_capacity(b),
        };
        for i in 0..b {
            let mass = (i as f64 + rng.gen::<f64>()) * segment;
            let slot = self.tree.find(mass);
            let t = self.slots[slot].as_ref().ok_or(Error::EmptyBuffer)?;
            let priority = self.tree.get(slot);
            out.ids.push(t.id);
            out.slots.push(slot);
            out.priorities.push(priority);
            out.weights.push((n_live * priority / total).powf(-beta));
        }
        let max_w = out.weights.iter().cloned().fold(0.0, f64::max);
        for w in &mut out.weights {
            *w /= max_w;
        }
        Ok(out)
    }

    /// Set `priority = (|δ| + ε)^alpha` for each live id, in order; a later
    /// entry for the same id overwrites an earlier one. Evicted ids are
    /// skipped.
    pub fn update_priorities(&mut self, ids: &[u64], td_errors: &[f64]) -> Result<()> {
        if ids.len() != td_errors.len() {
            return Err(Error::LengthMismatch {
                what: "priority update",
                expected: ids.len(),
                got: td_errors.len(),
            });
        }
        if td_errors.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("TD error"));
        }
        let exponent = self.exponent();
        for (&id, &delta) in ids.iter().zip(td_errors) {
            let Some(&slot) = self.slot_of.get(&id) else {
                continue;
            };
            let raw = delta.abs() + self.priority_epsilon;
            self.max_priority = self.max_priority.max(raw);
            self.tree.set(slot, raw.powf(exponent));
        }
        Ok(())
    }

    /// Rebuild from raw slot contents (used when restoring a snapshot).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        capacity: usize,
        alpha: f64,
        priority_epsilon: f64,
        mode: ReplayMode,
        max_priority: f64,
        next_slot: usize,
        entries: Vec<(usize, Transition, f64)>,
    ) -> Result<Self> {
        let mut buf = ReplayBuffer::new(capacity, alpha, priority_epsilon, mode);
        if next_slot >= capacity {
            return Err(Error::format("buffer snapshot", "next slot outside capacity"));
        }
        for (slot, t, priority) in entries {
            if slot >= capacity || buf.slots[slot].is_some() {
                return Err(Error::format("buffer snapshot", format!("bad slot {slot}")));
            }
            if !(priority >= 0.0 && priority.is_finite()) {
                return Err(Error::format("buffer snapshot", format!("bad priority at slot {slot}")));
            }
            if buf.slot_of.insert(t.id, slot).is_some() {
                return Err(Error::DuplicateTransition(t.id));
            }
            buf.slots[slot] = Some(t);
            buf.tree.set(slot, priority);
            buf.len += 1;
        }
        buf.max_priority = max_priority;
        buf.next_slot = next_slot;
        Ok(buf)
    }
}
