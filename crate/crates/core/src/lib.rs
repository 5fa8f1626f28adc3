//! Simulator and analysis toolkit for experience-constrained hierarchical
//! federated reinforcement learning.
//!
//! Clusters of UAV agents share one prioritized replay pool per cluster.
//! Each round a handful of actors collect a fixed experience budget, `K`
//! active learners each draw size-`b` minibatches from the shared pool and
//! take local DQN steps, the cluster head averages the learner models and a
//! global server averages the cluster models. Replay exposure (UCR), key
//! experience admission (KER), key TD contribution (KTC), success rate and
//! energy cost are recorded per round.

pub mod approximator;
pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod environment;
pub mod error;
pub mod federation;
pub mod learner;
pub mod metrics;
pub mod numeric;
pub mod replay;
pub mod rng;

pub use config::{EnvKind, ExperimentConfig, ReplayMode};
pub use error::{Error, Result};
pub use rng::{derive_rng, Label, Purpose, RngStream};
