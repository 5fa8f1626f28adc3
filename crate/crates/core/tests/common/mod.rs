#![allow(dead_code)]

use ec_hfrl_core::environment::{Observation, TerminalKind, Transition};
use ec_hfrl_core::replay::ReplayBuffer;
use ec_hfrl_core::{derive_rng, Label, Purpose, ReplayMode, RngStream};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> RngStream {
    derive_rng(seed, &[Label(Purpose::Sweep, 7)])
}

pub fn transition(id: u64) -> Transition {
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

/// Buffer holding ids `0..n`, with raw priorities set from `priorities`
/// when given (alpha as supplied, epsilon 0).
pub fn buffer_with(n: usize, alpha: f64, priorities: Option<&[f64]>) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(n, alpha, 0.0, ReplayMode::Prioritized);
    for id in 0..n as u64 {
        buf.push(transition(id)).unwrap();
    }
    if let Some(p) = priorities {
        let ids: Vec<u64> = (0..n as u64).collect();
        buf.update_priorities(&ids, p).unwrap();
    }
    buf
}

/// Pearson chi-square p-value of observed counts against expected counts.
pub fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    ChiSquared::new((observed.len() - 1) as f64).unwrap().sf(stat)
}

/// Half-width of a 3σ binomial interval.
pub fn three_sigma(p: f64, n: f64) -> f64 {
    3.0 * (p * (1.0 - p) / n).sqrt()
}
