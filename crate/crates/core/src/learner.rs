//! One active learner's local update for a round.

use crate::approximator::{loss_grad_td, optimizer_step, AdamState, NetworkParams, TdTarget};
use crate::environment::Transition;
use crate::error::{Error, Result};
use crate::replay::{MinibatchSample, ReplayBuffer};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerReport {
    pub learner: usize,
    /// One minibatch per local step.
    pub minibatches: Vec<MinibatchSample>,
    /// Raw TD errors per local step, aligned with `minibatches`.
    pub td_errors: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub params: NetworkParams,
}

/// Inputs shared by every learner in a cluster round.
#[derive(Clone, Copy, Debug)]
pub struct LocalUpdate<'a> {
    pub start_params: &'a NetworkParams,
    pub target_params: &'a NetworkParams,
    pub buffer: &'a ReplayBuffer,
    pub batch_size: usize,
    pub local_steps: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub td: TdTarget,
}

/// Run `local_steps` of sample -> TD loss/gradient -> Adam from a private
/// copy of the start parameters. The buffer is only read; TD errors are
/// returned for the caller to apply in the serialized phase.
///
/// Moment accumulators start fresh on every call.
pub fn local_update(job: &LocalUpdate<'_>, learner: usize, rng: &mut RngStream) -> Result<LearnerReport> {
    let mut params = job.start_params.clone();
    let mut adam = AdamState::new(params.len());
    let mut report = LearnerReport {
        learner,
        minibatches: Vec::with_capacity(job.local_steps),
        td_errors: Vec::with_capacity(job.local_steps),
        losses: Vec::with_capacity(job.local_steps),
        params: job.start_params.clone(),
    };
    for _ in 0..job.local_steps {
        let sample = job.buffer.sample(job.batch_size, job.beta, rng)?;
        let batch: Vec<&Transition> = sample
            .slots
            .iter()
            .map(|&s| job.buffer.get(s).ok_or(Error::EmptyBuffer))
            .collect::<Result<_>>()?;
        let out = loss_grad_td(&params, job.target_params, &batch, &sample.weights, job.td)?;
        optimizer_step(&mut params, &out.grad, &mut adam, job.learning_rate)?;
        report.losses.push(out.loss);
        report.td_errors.push(out.td_errors);
        report.minibatches.push(sample);
    }
    report.params = params;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::{init_params, Layout};
    use crate::config::{NetSpec, ReplayMode};
    use crate::environment::{Observation, TerminalKind};
    use crate::replay::union_coverage_ratio;
    use crate::rng::{derive_rng, Label, Purpose};

    fn t(id: u64, reward: f64) -> Transition {
        let obs = Observation::from_slice(&[0.1 * (id % 10) as f64; 7]).unwrap();
        Transition {
            id,
            obs,
            action: (id % 7) as usize,
            reward,
            next_obs: obs,
            done: false,
            terminal_kind: TerminalKind::None,
            episode_id: 0,
            hazard_at_next: 0.0,
            goal_dist_delta: 0.0,
            round_collected: 0,
        }
    }

    fn rng(i: u64) -> RngStream {
        derive_rng(1, &[Label(Purpose::Learner, i)])
    }

    #[test]
    fn zero_signal_fixed_point() {
        let mut buf = ReplayBuffer::new(64, 0.6, 1e-6, ReplayMode::Prioritized);
        for id in 0..40 {
            buf.push(t(id, 0.0)).unwrap();
        }
        let zero = NetworkParams::zeros(Layout::new(vec![7, 16, 7]));
        let job = LocalUpdate {
            start_params: &zero,
            target_params: &zero,
            buffer: &buf,
            batch_size: 8,
            local_steps: 1,
            beta: 0.4,
            learning_rate: 1e-3,
            // near-zero discount; targets are zero anyway since Q ≡ 0
            td: 1e-12.into(),
        };
        let r = local_update(&job, 0, &mut rng(0)).unwrap();
        assert!(r.td_errors[0].iter().all(|&d| d == 0.0));
        assert_eq!(r.params, zero);
        assert_eq!(r.losses, vec![0.0]);
    }

    #[test]
    fn identical_streams_identical_reports() {
        let mut buf = ReplayBuffer::new(64, 0.6, 1e-6, ReplayMode::Prioritized);
        for id in 0..40 {
            buf.push(t(id, id as f64 * 0.1)).unwrap();
        }
        let spec = NetSpec {
            hidden_dims: vec![16],
            ..NetSpec::default()
        };
        let p = init_params(&spec, &mut rng(9));
        let job = LocalUpdate {
            start_params: &p,
            target_params: &p,
            buffer: &buf,
            batch_size: 8,
            local_steps: 3,
            beta: 0.4,
            learning_rate: 1e-3,
            td: 0.99.into(),
        };
        let a = local_update(&job, 2, &mut rng(3)).unwrap();
        let b = local_update(&job, 2, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.minibatches.len(), 3);
        assert!(a.td_errors.iter().all(|d| d.len() == 8));
        assert_ne!(a.params, p);
    }

    #[test]
    fn singleton_buffer_degenerate_overlap() {
        let mut buf = ReplayBuffer::new(8, 0.6, 1e-6, ReplayMode::Prioritized);
        buf.push(t(5, 1.0)).unwrap();
        let p = NetworkParams::zeros(Layout::new(vec![7, 7]));
        let job = LocalUpdate {
            start_params: &p,
            target_params: &p,
            buffer: &buf,
            batch_size: 4,
            local_steps: 1,
            beta: 0.4,
            learning_rate: 1e-3,
            td: 0.9.into(),
        };
        let k = 3;
        let batches: Vec<MinibatchSample> = (0..k)
            .map(|i| local_update(&job, i, &mut rng(i as u64)).unwrap().minibatches.remove(0))
            .collect();
        assert!(batches.iter().all(|m| m.ids.iter().all(|&id| id == 5)));
        assert_eq!(union_coverage_ratio(&batches).unwrap(), 1.0 / (k as f64 * 4.0));
    }
}
