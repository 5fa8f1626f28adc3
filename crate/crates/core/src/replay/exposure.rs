//! Replay exposure: union coverage and the high-TD replay subset.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use super::ReplayBuffer;
use crate::config::TopRanking;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Distinct ids across all minibatches divided by the total number of draws
/// `K * b`. Every minibatch must have the same size.
pub fn union_coverage_ratio<B: AsRef<[u64]>>(minibatches: &[B]) -> Result<f64> {
    let first = minibatches.first().ok_or(Error::Empty("minibatch list"))?;
    let b = first.as_ref().len();
    if b == 0 {
        return Err(Error::Empty("minibatch"));
    }
    let mut distinct = HashSet::with_capacity(minibatches.len() * b);
    for m in minibatches {
        let ids = m.as_ref();
        if ids.len() != b {
            return Err(Error::LengthMismatch {
                what: "minibatch size",
                expected: b,
                got: ids.len(),
            });
        }
        distinct.extend(ids.iter().copied());
    }
    Ok(distinct.len() as f64 / (minibatches.len() * b) as f64)
}

/// `ceil(p / 100 * n)`, computed so that exact products are not bumped up
/// by rounding noise.
pub fn top_p_count(p_percent: f64, n: usize) -> usize {
    let raw = p_percent * n as f64 / 100.0;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).min(n)
}

/// Occurrence counts of each id over `m` read-only minibatch draws.
pub fn inclusion_counts(buf: &ReplayBuffer, m: usize, b: usize, rng: &mut RngStream) -> Result<BTreeMap<u64, u64>> {
    let mut counts = BTreeMap::new();
    for _ in 0..m {
        // importance weights are irrelevant here; beta only affects weights
        let sample = buf.sample(b, 0.0, rng)?;
        for id in sample.ids {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// High-TD replay subset over all live transitions.
pub fn top_p_subset(
    buf: &ReplayBuffer,
    p_percent: f64,
    m: usize,
    b: usize,
    ranking: TopRanking,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    top_p_subset_where(buf, p_percent, m, b, ranking, rng, |_| true)
}

/// High-TD replay subset restricted to the live transitions accepted by
/// `eligible`.
///
/// Draws `m` minibatches of size `b` without touching priorities, ranks
/// eligible transitions by inclusion frequency (or by priority under
/// [`TopRanking::Priority`]), breaking ties by higher priority and then
/// lower id, and returns the first `ceil(p/100 * n_eligible)` ids in rank
/// order. Under priority ranking no draws are made.
pub fn top_p_subset_where(
    buf: &ReplayBuffer,
    p_percent: f64,
    m: usize,
    b: usize,
    ranking: TopRanking,
    rng: &mut RngStream,
    eligible: impl Fn(u64) -> bool,
) -> Result<Vec<u64>> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let counts = match ranking {
        TopRanking::Frequency => inclusion_counts(buf, m, b, rng)?,
        TopRanking::Priority => BTreeMap::new(),
    };
    let mut ranked: Vec<(u64, f64, u64)> = buf
        .iter()
        .filter(|(_, t)| eligible(t.id))
        .map(|(slot, t)| (counts.get(&t.id).copied().unwrap_or(0), buf.priority_at_slot(slot), t.id))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
            .then_with(|| a.2.cmp(&b.2))
    });
    let k = top_p_count(p_percent, ranked.len());
    Ok(ranked.into_iter().take(k).map(|(_, _, id)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ReplayMode;
    use crate::environment::{Observation, TerminalKind, Transition};
    use crate::rng::{derive_rng, Label, Purpose};

    fn dummy(id: u64) -> Transition {
        let obs = Observation::from_slice(&[0.0; 7]).unwrap();
        Transition {
            id,
            obs,
            action: 0,
            reward: 0.0,
            next_obs: obs,
            done: false,
            terminal_kind: TerminalKind::None,
            episode_id: 0,
            hazard_at_next: 0.0,
            goal_dist_delta: 0.0,
            round_collected: 0,
        }
    }

    #[test]
    fn ucr_examples() {
        assert_eq!(union_coverage_ratio(&[vec![1u64, 2, 3, 4]]).unwrap(), 1.0);
        assert_eq!(union_coverage_ratio(&[vec![5u64, 6], vec![5, 6]]).unwrap(), 0.5);
        assert_eq!(union_coverage_ratio(&[vec![7u64, 7, 7]]).unwrap(), 1.0 / 3.0);
        assert!(union_coverage_ratio(&[vec![1u64, 2], vec![3]]).is_err());
        assert!(union_coverage_ratio::<Vec<u64>>(&[]).is_err());
    }

    #[test]
    fn top_count_rounding() {
        assert_eq!(top_p_count(5.0, 100), 5);
        assert_eq!(top_p_count(5.0, 101), 6);
        assert_eq!(top_p_count(100.0, 37), 37);
        assert_eq!(top_p_count(5.0, 1), 1);
        assert_eq!(top_p_count(5.0, 0), 0);
        assert_eq!(top_p_count(10.0, 30), 3);
    }

    #[test]
    fn dominant_entry_is_in_top() {
        let mut buf = ReplayBuffer::new(64, 1.0, 1e-9, ReplayMode::Prioritized);
        for id in 0..64 {
            buf.push(dummy(id)).unwrap();
        }
        let ids: Vec<u64> = (0..64).collect();
        let mut tds = vec![1e-4; 64];
        tds[17] = 1e4 * 63.0;
        buf.update_priorities(&ids, &tds).unwrap();
        let mut rng = derive_rng(1, &[Label(Purpose::DiagResample, 0)]);
        let top = top_p_subset(&buf, 5.0, 20, 8, TopRanking::Frequency, &mut rng).unwrap();
        assert_eq!(top[0], 17);
        let top = top_p_subset(&buf, 5.0, 20, 8, TopRanking::Priority, &mut rng).unwrap();
        assert_eq!(top[0], 17);
    }

    #[test]
    fn full_percent_returns_everything() {
        let mut buf = ReplayBuffer::new(16, 0.6, 1e-6, ReplayMode::Prioritized);
        for id in 0..10 {
            buf.push(dummy(id)).unwrap();
        }
        let mut rng = derive_rng(2, &[Label(Purpose::DiagResample, 0)]);
        let mut top = top_p_subset(&buf, 100.0, 5, 4, TopRanking::Frequency, &mut rng).unwrap();
        top.sort();
        assert_eq!(top, (0..10).collect::<Vec<_>>());
    }
}
