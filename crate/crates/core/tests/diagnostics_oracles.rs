mod common;

use std::collections::BTreeMap;

use common::{rng, three_sigma};
use ec_hfrl_core::approximator::{init_params, td_errors, Layout, NetworkParams};
use ec_hfrl_core::config::{DiagParams, TopRanking};
use ec_hfrl_core::diagnostics::{
    diagnose_buffer, evaluate_policy, evaluate_with, kappa, kappa_flags, ker, ktc, spearman, KeyIndicatorConfig,
    Stage, StageTracker,
};
use ec_hfrl_core::environment::{
    EpisodeOutcome, Environment, Observation, TerminalKind, Transition, HAZARD_SOURCE, N_ACTIONS,
};
use ec_hfrl_core::replay::snapshot::{read_buffer, read_outcomes, write_buffer, write_outcomes};
use ec_hfrl_core::replay::{top_p_subset_where, ReplayBuffer};
use ec_hfrl_core::{EnvKind, ExperimentConfig, ReplayMode, RngStream};
use proptest::prelude::*;
use rand::Rng;

/// Measured once with 20 000 episodes under a uniformly random policy.
const FIRE_RANDOM_BASELINE: f64 = 0.0004;

fn random_transition(id: u64, r: &mut RngStream) -> Transition {
    let pos: [f64; 3] = [r.gen(), r.gen(), r.gen()];
    let next: [f64; 3] = [r.gen(), r.gen(), r.gen()];
    let obs = |p: [f64; 3], z: f64| {
        Observation::from_slice(&[p[0], p[1], p[2], 0.9 - p[0], 0.9 - p[1], 0.9 - p[2], z]).unwrap()
    };
    let kind = match r.gen_range(0..10) {
        0 => TerminalKind::Success,
        1 | 2 => TerminalKind::HazardFailure,
        3 => TerminalKind::Timeout,
        _ => TerminalKind::None,
    };
    // dyadic rewards keep every TD sum exact under a zero network
    let reward = r.gen_range(1..64) as f64 / 16.0;
    Transition {
        id,
        obs: obs(pos, r.gen()),
        action: r.gen_range(0..N_ACTIONS),
        reward,
        next_obs: obs(next, r.gen()),
        done: kind != TerminalKind::None,
        terminal_kind: kind,
        episode_id: r.gen_range(0..12),
        hazard_at_next: r.gen(),
        goal_dist_delta: r.gen_range(-0.05..0.05),
        round_collected: 0,
    }
}

fn random_instance(seed: u64, n: usize) -> (ReplayBuffer, BTreeMap<u64, EpisodeOutcome>) {
    let mut r = rng(seed);
    let mut buf = ReplayBuffer::new(n, 0.6, 1e-6, ReplayMode::Prioritized);
    let mut ids = Vec::new();
    let mut tds = Vec::new();
    for id in 0..n as u64 {
        buf.push(random_transition(id, &mut r)).unwrap();
        ids.push(id);
        tds.push(r.gen_range(0.0..4.0));
    }
    buf.update_priorities(&ids, &tds).unwrap();
    let mut outcomes = BTreeMap::new();
    // episodes 10 and 11 are still in progress
    for e in 0..10u64 {
        let terminal = match e % 3 {
            0 => TerminalKind::Success,
            1 => TerminalKind::HazardFailure,
            _ => TerminalKind::Timeout,
        };
        outcomes.insert(
            e,
            EpisodeOutcome {
                terminal,
                final_goal_distance: r.gen_range(0.0..0.3),
            },
        );
    }
    (buf, outcomes)
}

fn naive_flag(t: &Transition, o: &EpisodeOutcome, cfg: &KeyIndicatorConfig) -> bool {
    match (cfg.env_kind, cfg.stage) {
        (EnvKind::Fire, _) => {
            o.terminal == TerminalKind::Success || o.final_goal_distance <= cfg.near_success_radius
        }
        (EnvKind::Chem, Stage::Early) => o.terminal == TerminalKind::Success,
        (EnvKind::Chem, Stage::Late) => {
            let p = t.next_obs.position();
            let d = ((p[0] - HAZARD_SOURCE[0]).powi(2) + (p[1] - HAZARD_SOURCE[1]).powi(2) + (p[2] - HAZARD_SOURCE[2]).powi(2)).sqrt();
            (t.obs.hazard_reading() - t.hazard_at_next > cfg.hazard_margin && t.goal_dist_delta < -cfg.goal_margin)
                || (t.terminal_kind == TerminalKind::HazardFailure && d <= cfg.failure_radius)
        }
    }
}

fn configs() -> Vec<KeyIndicatorConfig> {
    let diag = DiagParams::default();
    let mut out = Vec::new();
    for env in [EnvKind::Chem, EnvKind::Fire] {
        for stage in [Stage::Early, Stage::Late] {
            out.push(KeyIndicatorConfig::new(env, stage, &diag, 0.15));
        }
    }
    out
}

#[test]
fn kappa_matches_definition_and_needs_outcome() {
    let (buf, outcomes) = random_instance(1, 64);
    for cfg in configs() {
        let flags = kappa_flags(&buf, &outcomes, &cfg).unwrap();
        let finished: Vec<&Transition> = buf.iter().map(|(_, t)| t).filter(|t| outcomes.contains_key(&t.episode_id)).collect();
        assert_eq!(flags.len(), finished.len());
        for t in finished {
            assert_eq!(flags[&t.id], naive_flag(t, &outcomes[&t.episode_id], &cfg));
        }
        let open = buf.iter().map(|(_, t)| t).find(|t| t.episode_id >= 10).unwrap();
        assert!(kappa(open, None, &cfg).is_err());
    }
}

#[test]
fn kappa_spot_values() {
    let diag = DiagParams::default();
    let late = KeyIndicatorConfig::new(EnvKind::Chem, Stage::Late, &diag, 0.15);
    let early = KeyIndicatorConfig::new(EnvKind::Chem, Stage::Early, &diag, 0.15);
    let mut r = rng(2);
    let mut t = random_transition(0, &mut r);
    let mut v = t.obs.as_slice().to_vec();
    v[6] = 0.4;
    t.obs = Observation::from_slice(&v).unwrap();
    t.hazard_at_next = 0.3;
    t.goal_dist_delta = -0.01;
    t.terminal_kind = TerminalKind::None;
    let timeout = EpisodeOutcome {
        terminal: TerminalKind::Timeout,
        final_goal_distance: 0.5,
    };
    assert!(kappa(&t, Some(&timeout), &late).unwrap());
    assert!(!kappa(&t, Some(&timeout), &early).unwrap());
}

/// Everything the diagnostic pipeline computes, redone by enumeration on
/// random 64-entry buffers.
#[test]
fn ker_ktc_and_top_set_match_brute_force() {
    let zero = NetworkParams::zeros(Layout::new(vec![7, 8, 7]));
    for seed in 0..12u64 {
        let (buf, outcomes) = random_instance(100 + seed, 64);
        for cfg in configs() {
            let flags = kappa_flags(&buf, &outcomes, &cfg).unwrap();
            let top = top_p_subset_where(&buf, 10.0, 50, 8, TopRanking::Frequency, &mut rng(seed), |id| flags.contains_key(&id)).unwrap();

            // T_p: recount the same draws, then rank by enumeration
            let mut r = rng(seed);
            let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
            for _ in 0..50 {
                for id in buf.sample(8, 0.0, &mut r).unwrap().ids {
                    *counts.entry(id).or_default() += 1;
                }
            }
            let eligible: Vec<u64> = flags.keys().copied().collect();
            let key = |id: u64| (counts.get(&id).copied().unwrap_or(0), buf.priority(id).unwrap());
            let mut ranked = vec![0u64; eligible.len()];
            for &x in &eligible {
                let (cx, px) = key(x);
                let rank = eligible
                    .iter()
                    .filter(|&&y| {
                        let (cy, py) = key(y);
                        cy > cx || (cy == cx && (py > px || (py == px && y < x)))
                    })
                    .count();
                ranked[rank] = x;
            }
            let k = (0.10 * eligible.len() as f64).ceil() as usize;
            assert_eq!(top, ranked[..k].to_vec(), "seed {seed}");

            // KER as two count ratios
            let key_top = top.iter().filter(|id| flags[id]).count();
            let key_all = flags.values().filter(|&&f| f).count();
            let expected_ker = key_top as f64 / top.len() as f64 - key_all as f64 / flags.len() as f64;
            assert_eq!(ker(&top, &flags).unwrap(), expected_ker);
            assert!((-1.0..=1.0).contains(&expected_ker));

            // KTC with a zero network: |δ| is the (dyadic) reward
            let batch: Vec<&Transition> = top.iter().map(|&id| buf.get_by_id(id).unwrap()).collect();
            let deltas = td_errors(&zero, &zero, &batch, 0.99).unwrap();
            let td_abs: BTreeMap<u64, f64> = top.iter().zip(&deltas).map(|(&id, d)| (id, d.abs())).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for id in &top {
                den += td_abs[id];
                if flags[id] {
                    num += td_abs[id];
                }
            }
            assert_eq!(ktc(&top, &td_abs, &flags).unwrap(), num / den);
        }
    }
}

#[test]
fn ker_ktc_reference_values() {
    let mut flags = BTreeMap::new();
    for id in 0..100u64 {
        flags.insert(id, id < 10);
    }
    let top = vec![0, 1, 2, 50, 60];
    assert!((ker(&top, &flags).unwrap() - 0.5).abs() < 1e-15);
    let all_key: BTreeMap<u64, bool> = (0..10).map(|i| (i, true)).collect();
    assert_eq!(ker(&[1, 2], &all_key).unwrap(), 0.0);
    let f: BTreeMap<u64, bool> = [(0, true), (1, false), (2, false)].into_iter().collect();
    let td: BTreeMap<u64, f64> = [(0, 2.0), (1, 1.0), (2, 1.0)].into_iter().collect();
    assert_eq!(ktc(&[0, 1, 2], &td, &f).unwrap(), 0.5);
    let zeros: BTreeMap<u64, f64> = [(0, 0.0), (1, 0.0), (2, 0.0)].into_iter().collect();
    assert!(ktc(&[0, 1, 2], &zeros, &f).is_err());
    assert!(ker(&[], &f).is_err());
}

#[test]
fn diagnostics_reproduce_from_snapshot() {
    let (buf, outcomes) = random_instance(7, 64);
    let model = init_params(&ExperimentConfig::default().net_spec, &mut rng(8));
    let kcfg = KeyIndicatorConfig::new(EnvKind::Chem, Stage::Late, &DiagParams::default(), 0.15);
    let diag = DiagParams::default();
    let a = diagnose_buffer(&buf, &outcomes, &model, &model, 0.99.into(), &kcfg, &diag, 8, 3, 0.5, &mut rng(9)).unwrap();

    let mut bytes = Vec::new();
    write_buffer(&mut bytes, &buf).unwrap();
    let restored = read_buffer(bytes.as_slice()).unwrap();
    let mut ob = Vec::new();
    write_outcomes(&mut ob, &outcomes).unwrap();
    let restored_outcomes = read_outcomes(ob.as_slice()).unwrap();
    let b = diagnose_buffer(&restored, &restored_outcomes, &model, &model, 0.99.into(), &kcfg, &diag, 8, 3, 0.5, &mut rng(9)).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.ktc));
}

/// Pearson correlation of doubled ranks, with every sum formed from
/// pairwise differences.
fn naive_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let doubled_rank = |v: &[f64], i: usize| -> i128 {
        let less = v.iter().filter(|&&w| w < v[i]).count() as i128;
        let equal = v.iter().filter(|&&w| w == v[i]).count() as i128;
        2 * less + equal + 1
    };
    let n = xs.len();
    let rx: Vec<i128> = (0..n).map(|i| doubled_rank(xs, i)).collect();
    let ry: Vec<i128> = (0..n).map(|i| doubled_rank(ys, i)).collect();
    let (mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128);
    for i in 0..n {
        for j in 0..n {
            sxx += (rx[i] - rx[j]) * (rx[i] - rx[j]);
            syy += (ry[i] - ry[j]) * (ry[i] - ry[j]);
            sxy += (rx[i] - rx[j]) * (ry[i] - ry[j]);
        }
    }
    // the double sum counts each pair twice: sum_{i,j} = 2 (n S2 - S1^2)
    let (sxx, syy, sxy) = (sxx / 2, syy / 2, sxy / 2);
    sxy as f64 / (sxx as f64 * syy as f64).sqrt()
}

#[test]
fn spearman_reference_values() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap(), 0.6);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(spearman(&[1.0], &[1.0]).is_err());
    assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn spearman_matches_naive_on_random_lists() {
    let mut r = rng(11);
    for _ in 0..200 {
        let n = r.gen_range(2..=64);
        let xs: Vec<f64> = (0..n).map(|_| r.gen_range(0..10) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        match spearman(&xs, &ys) {
            Ok(rho) => assert_eq!(rho, naive_spearman(&xs, &ys)),
            Err(_) => assert!(xs.iter().all(|&x| x == xs[0])),
        }
    }
}

#[test]
fn scripted_policy_succeeds_without_hazard() {
    let env = Environment::new(EnvKind::Chem, 0.15, 0.05, 0.05, 100).without_hazard();
    let rate = evaluate_with(&env, 50, &mut rng(12), |obs| {
        let g = obs.goal_delta();
        let axis = (0..3).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
        Ok(2 * axis + usize::from(g[axis] < 0.0))
    })
    .unwrap();
    assert_eq!(rate, 1.0);
}

#[test]
fn random_fire_policy_stays_near_baseline() {
    let env = Environment::new(EnvKind::Fire, 0.15, 0.05, 0.05, 100);
    let episodes = 2000;
    let mut pr = rng(13);
    let rate = evaluate_with(&env, episodes, &mut rng(14), |_| Ok(pr.gen_range(0..N_ACTIONS))).unwrap();
    assert!((rate - FIRE_RANDOM_BASELINE).abs() <= three_sigma(FIRE_RANDOM_BASELINE, episodes as f64), "{rate}");
}

#[test]
fn evaluation_is_deterministic() {
    let env = Environment::new(EnvKind::Chem, 0.15, 0.05, 0.05, 100);
    let model = init_params(&ExperimentConfig::default().net_spec, &mut rng(15));
    let a = evaluate_policy(&model, &env, 20, &mut rng(16)).unwrap();
    let b = evaluate_policy(&model, &env, 20, &mut rng(16)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stage_switch_uses_trailing_mean_and_is_sticky() {
    let mut s = StageTracker::new(0.5, 3);
    assert_eq!(s.record(9, 0.1), Stage::Early);
    assert_eq!(s.record(19, 0.2), Stage::Early);
    assert_eq!(s.record(29, 0.9), Stage::Early);
    assert_eq!(s.record(39, 0.9), Stage::Late);
    assert_eq!(s.switch_round(), Some(39));
    assert_eq!(s.record(49, 0.0), Stage::Late);
    let mut eager = StageTracker::new(0.5, 3);
    assert_eq!(eager.record(0, 0.6), Stage::Late);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spearman_invariant_under_monotone_maps(
        pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40),
        shift in -50.0f64..50.0,
        scale in 0.1f64..10.0,
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(rho) = spearman(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&rho));
            let fx: Vec<f64> = xs.iter().map(|x| (x * scale + shift).exp().min(f64::MAX)).collect();
            let gy: Vec<f64> = ys.iter().map(|y| y.powi(3) * scale - shift).collect();
            // strictly monotone maps can only merge values through rounding
            let distinct = |v: &[f64], w: &[f64]| {
                let count = |a: &[f64]| a.iter().map(|x| x.to_bits()).collect::<std::collections::BTreeSet<_>>().len();
                count(v) == count(w)
            };
            if distinct(&xs, &fx) && distinct(&ys, &gy) {
                prop_assert_eq!(spearman(&fx, &gy).unwrap(), rho);
            }
        }
    }

    #[test]
    fn ker_zero_when_flags_constant(n in 1usize..64, flag in any::<bool>(), take in 1usize..64) {
        let flags: BTreeMap<u64, bool> = (0..n as u64).map(|i| (i, flag)).collect();
        let top: Vec<u64> = (0..take.min(n) as u64).collect();
        prop_assert_eq!(ker(&top, &flags).unwrap(), 0.0);
    }

    #[test]
    fn ktc_equals_key_fraction_for_equal_tds(bits in proptest::collection::vec(any::<bool>(), 1..64), d in 0.01f64..10.0) {
        let flags: BTreeMap<u64, bool> = bits.iter().enumerate().map(|(i, &b)| (i as u64, b)).collect();
        let top: Vec<u64> = flags.keys().copied().collect();
        let td: BTreeMap<u64, f64> = top.iter().map(|&i| (i, d)).collect();
        let key = bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64;
        prop_assert!((ktc(&top, &td, &flags).unwrap() - key).abs() < 1e-12);
    }
}
