mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{buffer_with, chi_square_p, rng, transition};
use ec_hfrl_core::config::TopRanking;
use ec_hfrl_core::replay::{inclusion_counts, top_p_count, top_p_subset, union_coverage_ratio, ReplayBuffer, SumTree};
use ec_hfrl_core::ReplayMode;
use proptest::prelude::*;
use rand::Rng;

fn leaf_sum(buf: &ReplayBuffer) -> f64 {
    buf.leaf_values().iter().sum()
}

#[test]
fn proportional_two_entries() {
    let buf = buffer_with(2, 1.0, Some(&[3.0, 1.0]));
    let mut r = rng(1);
    let n = 100_000;
    let hits = (0..n).filter(|_| buf.sample(1, 0.4, &mut r).unwrap().ids[0] == 0).count();
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.75).abs() <= 0.01, "{freq}");
}

#[test]
fn proportional_sixteen_entries() {
    let priorities: Vec<f64> = (1..=16).map(|i| i as f64).collect();
    let buf = buffer_with(16, 1.0, Some(&priorities));
    let total: f64 = priorities.iter().sum();
    let mut r = rng(2);
    let n = 100_000;
    let mut counts = [0u64; 16];
    for _ in 0..n {
        counts[buf.sample(1, 1.0, &mut r).unwrap().ids[0] as usize] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let freq = c as f64 / n as f64;
        assert!((freq - priorities[i] / total).abs() <= 0.02, "entry {i}: {freq}");
    }
}

#[test]
fn uniform_priorities_pass_chi_square() {
    let buf = buffer_with(16, 0.6, None);
    let mut r = rng(3);
    let n = 100_000u64;
    let mut counts = [0u64; 16];
    for _ in 0..n {
        counts[buf.sample(1, 1.0, &mut r).unwrap().ids[0] as usize] += 1;
    }
    let p = chi_square_p(&counts, &[n as f64 / 16.0; 16]);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn uniform_mode_ignores_priorities() {
    let mut buf = ReplayBuffer::new(8, 0.6, 1e-6, ReplayMode::Uniform);
    for id in 0..8 {
        buf.push(transition(id)).unwrap();
    }
    buf.update_priorities(&[0, 1], &[100.0, 0.0]).unwrap();
    assert!(buf.leaf_values().iter().all(|&v| v == 1.0));
    let s = buf.sample(8, 1.0, &mut rng(4)).unwrap();
    assert!(s.weights.iter().all(|&w| w == 1.0));
}

#[test]
fn importance_weights_follow_definition() {
    let buf = buffer_with(4, 1.0, Some(&[1.0, 2.0, 3.0, 4.0]));
    let s = buf.sample(16, 0.5, &mut rng(5)).unwrap();
    let raw: Vec<f64> = s.priorities.iter().map(|p| (4.0 * p / 10.0_f64).powf(-0.5)).collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    for (w, r) in s.weights.iter().zip(&raw) {
        assert!((w - r / max).abs() < 1e-12);
    }
}

/// Exact expectation for 6 equal-priority entries, K = 2, b = 2: each
/// minibatch takes one id from {0,1,2} and one from {3,4,5}, uniformly.
fn enumerated_ucr() -> f64 {
    let mut total = 0.0;
    let mut cases = 0.0;
    for a0 in 0..3u64 {
        for a1 in 3..6u64 {
            for b0 in 0..3u64 {
                for b1 in 3..6u64 {
                    let set: BTreeSet<u64> = [a0, a1, b0, b1].into_iter().collect();
                    total += set.len() as f64 / 4.0;
                    cases += 1.0;
                }
            }
        }
    }
    total / cases
}

#[test]
fn ucr_matches_enumeration() {
    let exact = enumerated_ucr();
    // each half collides with probability 1/3: (2 - 1/3) * 2 / 4
    assert!((exact - 5.0 / 6.0).abs() < 1e-15);
    let buf = buffer_with(6, 0.6, None);
    let mut r = rng(6);
    let rounds = 100_000;
    let mut sum = 0.0;
    for _ in 0..rounds {
        let batches = [buf.sample(2, 0.0, &mut r).unwrap(), buf.sample(2, 0.0, &mut r).unwrap()];
        sum += union_coverage_ratio(&batches).unwrap();
    }
    let mc = sum / rounds as f64;
    assert!((mc - exact).abs() <= 0.01, "{mc} vs {exact}");
}

#[test]
fn ucr_edge_cases() {
    assert_eq!(union_coverage_ratio(&[vec![1u64, 2, 3, 4]]).unwrap(), 1.0);
    assert_eq!(union_coverage_ratio(&[vec![7u64; 4], vec![7u64; 4]]).unwrap(), 1.0 / 8.0);
    assert!(union_coverage_ratio(&[vec![1u64, 2], vec![3u64]]).is_err());
    assert!(union_coverage_ratio::<Vec<u64>>(&[]).is_err());
}

/// Naive T_p: count inclusions from the same draws, then place each id by
/// counting how many ids beat it.
fn naive_top_p(buf: &ReplayBuffer, p: f64, m: usize, b: usize, seed: u64) -> Vec<u64> {
    let mut r = rng(seed);
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for _ in 0..m {
        for id in buf.sample(b, 0.0, &mut r).unwrap().ids {
            *counts.entry(id).or_default() += 1;
        }
    }
    let ids = buf.live_ids();
    let key = |id: u64| (counts.get(&id).copied().unwrap_or(0), buf.priority(id).unwrap());
    let beats = |a: u64, z: u64| {
        let (ca, pa) = key(a);
        let (cz, pz) = key(z);
        ca > cz || (ca == cz && (pa > pz || (pa == pz && a < z)))
    };
    let mut ranked = vec![u64::MAX; ids.len()];
    for &x in &ids {
        let rank = ids.iter().filter(|&&y| beats(y, x)).count();
        ranked[rank] = x;
    }
    let k = (p / 100.0 * ids.len() as f64).ceil() as usize;
    ranked.truncate(k);
    ranked
}

#[test]
fn top_p_matches_naive_recount_on_64_entries() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let priorities: Vec<f64> = (0..64).map(|_| r.gen_range(0.0..3.0_f64).powi(3)).collect();
        let buf = buffer_with(64, 0.6, Some(&priorities));
        for &p in &[5.0, 12.5, 50.0, 100.0] {
            let fast = top_p_subset(&buf, p, 100, 8, TopRanking::Frequency, &mut rng(seed)).unwrap();
            assert_eq!(fast, naive_top_p(&buf, p, 100, 8, seed), "seed {seed} p {p}");
        }
    }
}

#[test]
fn top_p_degenerate_cases() {
    let mut priorities = vec![1e-9; 32];
    priorities[17] = 1e6;
    let buf = buffer_with(32, 1.0, Some(&priorities));
    let top = top_p_subset(&buf, 5.0, 100, 4, TopRanking::Frequency, &mut rng(9)).unwrap();
    assert!(top.contains(&17));
    let flat = buffer_with(20, 0.6, None);
    let mut all = top_p_subset(&flat, 100.0, 10, 4, TopRanking::Frequency, &mut rng(9)).unwrap();
    all.sort_unstable();
    assert_eq!(all, flat.live_ids());
    assert_eq!(top_p_count(5.0, 200), 10);
    assert_eq!(top_p_count(5.0, 30), 2);
}

#[test]
fn inclusion_counts_total_draws() {
    let buf = buffer_with(10, 0.6, None);
    let counts = inclusion_counts(&buf, 7, 3, &mut rng(10)).unwrap();
    assert_eq!(counts.values().sum::<u64>(), 21);
}

#[test]
fn eviction_is_fifo() {
    let mut buf = ReplayBuffer::new(4, 0.6, 1e-6, ReplayMode::Prioritized);
    for id in 0..5 {
        buf.push(transition(id)).unwrap();
    }
    assert!(!buf.contains(0));
    assert_eq!(buf.len(), 4);
    let mut r = rng(11);
    for _ in 0..1000 {
        assert!(!buf.sample(4, 0.4, &mut r).unwrap().ids.contains(&0));
    }
    assert!(buf.push(transition(3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn root_equals_leaf_sum_after_pushes_and_updates(
        cap in 1usize..40,
        pushes in 1usize..120,
        updates in proptest::collection::vec((0u64..160, -50.0f64..50.0), 0..200),
    ) {
        let mut buf = ReplayBuffer::new(cap, 0.6, 1e-6, ReplayMode::Prioritized);
        for id in 0..pushes as u64 {
            buf.push(transition(id)).unwrap();
            let s = leaf_sum(&buf);
            prop_assert!((buf.total_priority() - s).abs() <= 1e-9 * s.max(1.0));
        }
        for (id, td) in updates {
            buf.update_priorities(&[id], &[td]).unwrap();
        }
        let s = leaf_sum(&buf);
        prop_assert!((buf.total_priority() - s).abs() <= 1e-9 * s.max(1.0));
        prop_assert_eq!(buf.len(), cap.min(pushes));
    }

    #[test]
    fn sum_tree_find_lands_on_positive_leaf(values in proptest::collection::vec(0.0f64..10.0, 1..50), u in 0.0f64..1.0) {
        let mut tree = SumTree::new(values.len());
        for (i, v) in values.iter().enumerate() {
            tree.set(i, *v);
        }
        prop_assume!(tree.total() > 0.0);
        let i = tree.find(u * tree.total());
        prop_assert!(i < values.len());
        prop_assert!(values[i] > 0.0);
    }

    #[test]
    fn ucr_in_unit_interval(batches in proptest::collection::vec(proptest::collection::vec(0u64..20, 5), 1..8)) {
        let u = union_coverage_ratio(&batches).unwrap();
        prop_assert!(u > 0.0 && u <= 1.0);
        let all_distinct = batches.iter().flatten().collect::<BTreeSet<_>>().len() == batches.len() * 5;
        prop_assert_eq!(u == 1.0, all_distinct);
    }
}
