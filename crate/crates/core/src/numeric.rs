//! Reductions shared by the loss, aggregation and diagnostics code.

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation. The result depends only on the multiset of
/// values up to reassociation error of O(log n) ulps.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Linear interpolation from `start` to `end` over `span` rounds, then held.
pub fn linear_schedule(start: f64, end: f64, round: u64, span: u64) -> f64 {
    if span == 0 {
        return end;
    }
    if round >= span {
        return end;
    }
    start + (end - start) * (round as f64 / span as f64)
}

pub fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
