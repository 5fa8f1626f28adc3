//! Cluster-level prioritized replay.

mod buffer;
mod exposure;
pub mod snapshot;
mod sum_tree;

pub use buffer::{MinibatchSample, ReplayBuffer};
pub use exposure::{inclusion_counts, top_p_count, top_p_subset, top_p_subset_where, union_coverage_ratio};
pub use sum_tree::SumTree;
