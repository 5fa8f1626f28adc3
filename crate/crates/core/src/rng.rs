//! Deterministic random streams keyed by a master seed and a label path.
//!
//! Every source of randomness in a run is addressed by an ordered list of
//! `(purpose, index)` labels, e.g. `[(Round, 7), (Cluster, 1), (Learner, 3)]`.
//! The label path is folded into a 256-bit ChaCha seed with a 64-bit
//! avalanche mix; only integer arithmetic is involved, so streams are the
//! same on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Round,
    Cluster,
    EnvStep,
    ActorEpisode,
    ActorSelect,
    Learner,
    LearnerSelect,
    LearnerSample,
    Leach,
    Eval,
    DiagResample,
    Init,
    Sweep,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Round => 1,
            Purpose::Cluster => 2,
            Purpose::EnvStep => 3,
            Purpose::ActorEpisode => 4,
            Purpose::ActorSelect => 5,
            Purpose::Learner => 6,
            Purpose::LearnerSelect => 7,
            Purpose::LearnerSample => 8,
            Purpose::Leach => 9,
            Purpose::Eval => 10,
            Purpose::DiagResample => 11,
            Purpose::Init => 12,
            Purpose::Sweep => 13,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Label(pub Purpose, pub u64);

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// A reproducible pseudo-random stream.
#[derive(Clone, Debug)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn from_key(key: u64) -> Self {
        let mut seed = [0u8; 32];
        let mut state = key;
        for chunk in seed.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        RngStream(ChaCha8Rng::from_seed(seed))
    }
}

/// Fold a label path into a single 64-bit stream key.
pub fn stream_key(master_seed: u64, labels: &[Label]) -> u64 {
    let mut h = mix64(master_seed ^ GOLDEN);
    for Label(purpose, index) in labels {
        h = mix64(h.wrapping_add(GOLDEN) ^ mix64(purpose.tag()));
        h = mix64(h.wrapping_add(GOLDEN) ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    h
}

pub fn derive_rng(master_seed: u64, labels: &[Label]) -> RngStream {
    debug_assert!(!labels.is_empty(), "label path must be nonempty");
    RngStream::from_key(stream_key(master_seed, labels))
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}
