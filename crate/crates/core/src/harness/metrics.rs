use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::sim::TrajectoryRecord;
use crate::types::INITIAL_CASH;

/// Pearson correlation; `None` when either series is constant or shorter than 2.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation between the advisor's and the user's daily positions.
pub fn correlation_per_user(records: &[TrajectoryRecord]) -> Option<f64> {
    let ai: Vec<f64> = records.iter().map(|r| r.d_ai).collect();
    let user: Vec<f64> = records.iter().map(|r| f64::from(r.d_u)).collect();
    pearson(&ai, &user)
}

/// Final assets of a logged episode: cash after the last order plus the held
/// position at the next close.
pub fn final_assets_from_records(records: &[TrajectoryRecord], series: &PriceSeries) -> Result<f64> {
    let Some(last) = records.last() else {
        return Ok(INITIAL_CASH);
    };
    let cash = last.total_assets - f64::from(last.d_u) * last.close;
    Ok(cash + f64::from(last.d_u) * series.close(last.series_day + 1)?)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1); 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Parameter(format!("bad histogram range [{lo}, {hi}] x {bins}")));
        }
        let (lo, hi) = if lo == hi { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            if v < lo || v > hi {
                continue;
            }
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self { edges, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub user_index: usize,
    pub replication: usize,
    pub final_assets: f64,
    pub correlation: Option<f64>,
    /// Excluded from the summary statistics by the outlier toggle.
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub strategy_id: String,
    pub episodes: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub histogram: Histogram,
    pub mean_correlation: Option<f64>,
    pub undefined_correlations: usize,
    pub fraction_below_initial: f64,
    pub excluded_outliers: usize,
    pub per_episode: Vec<EpisodeStat>,
}

/// Marks outliers: values further than `k` SDs from the mean of all values.
pub fn flag_outliers(stats: &mut [EpisodeStat], k: Option<f64>) {
    let Some(k) = k else { return };
    let values: Vec<f64> = stats.iter().map(|s| s.final_assets).collect();
    if values.len() < 2 {
        return;
    }
    let (m, sd) = (mean(&values), sample_sd(&values));
    for s in stats {
        s.outlier = (s.final_assets - m).abs() > k * sd;
    }
}

/// Summary of one condition; the histogram uses the shared `[lo, hi]` range.
pub fn summarize_condition(
    strategy_id: &str,
    per_episode: Vec<EpisodeStat>,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<ConditionSummary> {
    let kept: Vec<&EpisodeStat> = per_episode.iter().filter(|s| !s.outlier).collect();
    if kept.is_empty() {
        return Err(Error::Validation(format!("no episodes to summarize for {strategy_id}")));
    }
    let values: Vec<f64> = kept.iter().map(|s| s.final_assets).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let defined: Vec<f64> = kept.iter().filter_map(|s| s.correlation).collect();
    let below = values.iter().filter(|&&v| v < INITIAL_CASH).count();
    Ok(ConditionSummary {
        strategy_id: strategy_id.to_string(),
        episodes: kept.len(),
        mean: mean(&values),
        sd: sample_sd(&values),
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        histogram: Histogram::new(&values, lo, hi, bins)?,
        mean_correlation: (!defined.is_empty()).then(|| mean(&defined)),
        undefined_correlations: kept.len() - defined.len(),
        fraction_below_initial: below as f64 / values.len() as f64,
        excluded_outliers: per_episode.len() - kept.len(),
        per_episode,
    })
}

/// Summaries for several conditions with a common histogram range.
pub fn summarize_all(
    conditions: Vec<(String, Vec<EpisodeStat>)>,
    bins: usize,
    outlier_sd: Option<f64>,
) -> Result<Vec<ConditionSummary>> {
    let mut conditions = conditions;
    for (_, stats) in &mut conditions {
        flag_outliers(stats, outlier_sd);
    }
    let kept = conditions
        .iter()
        .flat_map(|(_, s)| s.iter().filter(|e| !e.outlier).map(|e| e.final_assets));
    let (lo, hi) = kept.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    conditions
        .into_iter()
        .map(|(id, stats)| summarize_condition(&id, stats, lo, hi, bins))
        .collect()
}
