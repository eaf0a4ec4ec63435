//! Execution statistics per category and the forecasted interaction time.
//!
//! `FIT = Σ (A_i + P_i) · C_i` where `A_i` is the average execution time of
//! category `i`, `P_i` the mean pause between interactions and `C_i` the
//! number of interactions of that category in a generated batch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no execution statistics for category `{0}`")]
    MissingCategory(String),
    #[error("desired time shares sum to {0}, expected 1")]
    SharesSum(f64),
    #[error("share for `{0}` is negative")]
    NegativeShare(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryStat {
    pub total_time: f64,
    pub count: u64,
    pub depleted_requests: u64,
}

impl CategoryStat {
    /// Average execution time, `None` before the first execution.
    pub fn avg_time(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total_time / self.count as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InteractionStats {
    categories: BTreeMap<String, CategoryStat>,
}

impl InteractionStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_execution(&mut self, category: &str, duration: f64) {
        debug_assert!(duration >= 0.0);
        let stat = self.categories.entry(category.to_owned()).or_default();
        stat.total_time += duration.max(0.0);
        stat.count += 1;
    }

    pub fn record_depletion(&mut self, category: &str) {
        self.categories
            .entry(category.to_owned())
            .or_default()
            .depleted_requests += 1;
    }

    pub fn get(&self, category: &str) -> Option<&CategoryStat> {
        self.categories.get(category)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CategoryStat)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_depleted_requests(&self) -> u64 {
        self.categories.values().map(|s| s.depleted_requests).sum()
    }

    /// Average time for `category`, falling back to `default` for categories
    /// that have never run.
    pub fn avg_or(&self, category: &str, default: f64) -> f64 {
        self.get(category).and_then(CategoryStat::avg_time).unwrap_or(default)
    }
}

/// One term of the FIT sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTerm {
    /// Average execution time `A_i`, seconds.
    pub avg_time: f64,
    /// Average pause `P_i`, seconds; the mean of the new-interaction pause.
    pub pause: f64,
    /// Number of interactions `C_i`.
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInput {
    pub terms: Vec<FitTerm>,
}

/// Forecasted interaction time in seconds.
///
/// ```
/// use korra_core::stats::{compute_fit, FitInput, FitTerm};
///
/// let input = FitInput {
///     terms: vec![
///         FitTerm { avg_time: 4.0, pause: 3.7, count: 3 },
///         FitTerm { avg_time: 6.0, pause: 3.7, count: 2 },
///     ],
/// };
/// assert!((compute_fit(&input) - 42.5).abs() < 1e-12);
/// ```
pub fn compute_fit(input: &FitInput) -> f64 {
    input
        .terms
        .iter()
        .map(|t| (t.avg_time + t.pause) * t.count as f64)
        .sum()
}

/// FIT for a batch whose per-category counts are given, using recorded
/// averages (or `default_duration` for categories never executed).
pub fn batch_fit(
    stats: &InteractionStats,
    counts: &BTreeMap<String, u64>,
    pause_mean: f64,
    default_duration: f64,
) -> f64 {
    let terms = counts
        .iter()
        .map(|(cat, count)| FitTerm {
            avg_time: stats.avg_or(cat, default_duration),
            pause: pause_mean,
            count: *count,
        })
        .collect();
    compute_fit(&FitInput { terms })
}

/// Main Distribution weights under which the expected share of *time* spent
/// in each category matches `desired`: `w_i ∝ share_i / (A_i + P_i)`.
pub fn suggest_weights(
    desired: &BTreeMap<String, f64>,
    stats: &InteractionStats,
    pause_mean: f64,
) -> Result<BTreeMap<String, f64>, StatsError> {
    let sum: f64 = desired.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(StatsError::SharesSum(sum));
    }
    let mut raw = BTreeMap::new();
    for (cat, share) in desired {
        if *share < 0.0 {
            return Err(StatsError::NegativeShare(cat.clone()));
        }
        let avg = stats
            .get(cat)
            .and_then(CategoryStat::avg_time)
            .ok_or_else(|| StatsError::MissingCategory(cat.clone()))?;
        raw.insert(cat.clone(), share / (avg + pause_mean));
    }
    let total: f64 = raw.values().sum();
    Ok(raw.into_iter().map(|(k, v)| (k, v / total)).collect())
}
