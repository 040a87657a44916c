//! Retrieval accuracy and latency statistics.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::index::RankedResults;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no results to score")]
    EmptyResults,
    #[error("no timing samples")]
    NoSamples,
}

/// Correct predictions over total predictions, where every returned image is
/// one prediction and it is correct when its path is in `relevant`.
pub fn accuracy(results: &RankedResults, relevant: &BTreeSet<String>) -> Result<f64, EvalError> {
    if results.items.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let hits = results.items.iter().filter(|i| relevant.contains(&i.path)).count();
    Ok(hits as f64 / results.items.len() as f64)
}

/// Mean of the present values; `None` when there are none.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summary of per-call latencies, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl TimingStats {
    /// Percentiles use the nearest-rank method.
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self, EvalError> {
        if samples_ms.is_empty() {
            return Err(EvalError::NoSamples);
        }
        let mut sorted: Vec<f64> = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = libm::ceil(p * sorted.len() as f64) as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Ok(Self {
            samples: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        })
    }
}
