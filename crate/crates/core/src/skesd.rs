//! Scott-Knott ranking with an effect-size merge pass.
//!
//! Metrics are ordered by mean score and split recursively with the classic
//! Scott-Knott likelihood-ratio test. Adjacent groups whose pooled Cohen's d
//! is negligible are then merged.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_NEGLIGIBLE_D: f64 = 0.2;

/// Score distribution per metric, e.g. one value per bootstrap iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSamples {
    samples: Vec<(String, Vec<f64>)>,
}

impl ScoreSamples {
    pub fn new(samples: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("score samples"));
        }
        let len = samples[0].1.len();
        if len < 2 {
            return Err(Error::TooShort { needed: 2, got: len });
        }
        for (i, (name, v)) in samples.iter().enumerate() {
            if samples[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateMetric(name.clone()));
            }
            if v.len() != len {
                return Err(Error::LengthMismatch { left: len, right: v.len() });
            }
            if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { column: name.clone(), row });
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.samples[0].1.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.samples.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMetric {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroup {
    pub rank: usize,
    pub mean: f64,
    pub metrics: Vec<RankedMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScottKnottRanking {
    pub groups: Vec<RankGroup>,
}

impl ScottKnottRanking {
    pub fn rank(&self, metric: &str) -> Option<usize> {
        self.metrics().find(|m| m.metric == metric).map(|m| m.rank)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &RankedMetric> {
        self.groups.iter().flat_map(|g| g.metrics.iter())
    }

    pub fn n_ranks(&self) -> usize {
        self.groups.len()
    }

    /// Metrics ranked in the best `k` ranks.
    pub fn top_k(&self, k: usize) -> Result<Vec<String>> {
        top_k(self, k)
    }
}

pub fn top_k(r: &ScottKnottRanking, k: usize) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(r.metrics().filter(|m| m.rank <= k).map(|m| m.metric.clone()).collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

struct Item<'a> {
    name: &'a str,
    values: &'a [f64],
    mean: f64,
}

/// Split points (exclusive ends) of the recursive Scott-Knott partition of
/// `means[lo..hi]`.
fn partition(means: &[f64], lo: usize, hi: usize, s2_mean: f64, v: f64, alpha: f64, cuts: &mut Vec<usize>) {
    let k = hi - lo;
    if k < 2 {
        return;
    }
    let part = &means[lo..hi];
    let total: f64 = part.iter().sum();
    let kf = k as f64;
    let mut best: Option<(usize, f64)> = None;
    let mut t1 = 0.0;
    for c in 1..k {
        t1 += part[c - 1];
        if part[c - 1] == part[c] {
            continue;
        }
        let (k1, k2) = (c as f64, (k - c) as f64);
        let t2 = total - t1;
        let b = t1 * t1 / k1 + t2 * t2 / k2 - total * total / kf;
        if best.is_none_or(|(_, bb)| b > bb) {
            best = Some((c, b));
        }
    }
    let Some((cut, b0)) = best else { return };
    if b0 <= 0.0 {
        return;
    }
    let grand = total / kf;
    let ss: f64 = part.iter().map(|m| (m - grand).powi(2)).sum();
    let sigma2 = (ss + v * s2_mean) / (kf + v);
    let lambda = if sigma2 > 0.0 {
        PI / (2.0 * (PI - 2.0)) * b0 / sigma2
    } else {
        f64::INFINITY
    };
    let critical = ChiSquared::new(kf / (PI - 2.0)).expect("positive df").inverse_cdf(1.0 - alpha);
    if lambda > critical {
        partition(means, lo, lo + cut, s2_mean, v, alpha, cuts);
        cuts.push(lo + cut);
        partition(means, lo + cut, hi, s2_mean, v, alpha, cuts);
    }
}

/// Pooled-sd Cohen's d between two sample sets; `None` for a zero
/// denominator with unequal means.
fn cohens_d(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let diff = (mean(a) - mean(b)).abs();
    let pooled = (((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0)).sqrt();
    if pooled > 0.0 {
        Some(diff / pooled)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

pub fn scott_knott_esd(s: &ScoreSamples, alpha: f64, negligible_d: f64) -> Result<ScottKnottRanking> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if negligible_d.is_nan() || negligible_d < 0.0 {
        return Err(Error::InvalidConfig(format!("negligible d must be >= 0, got {negligible_d}")));
    }
    let mut items: Vec<Item> = s
        .iter()
        .map(|(name, values)| Item {
            name,
            values,
            mean: mean(values),
        })
        .collect();
    items.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.name.cmp(b.name)));

    // Pooled within-metric variance over all metrics.
    let n = s.n_samples() as f64;
    let v = items.len() as f64 * (n - 1.0);
    let mse = items.iter().map(|it| sample_var(it.values) * (n - 1.0)).sum::<f64>() / v;
    let means: Vec<f64> = items.iter().map(|it| it.mean).collect();
    let mut cuts = Vec::new();
    partition(&means, 0, items.len(), mse / n, v, alpha, &mut cuts);

    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for &c in cuts.iter().chain(std::iter::once(&items.len())) {
        bounds.push((start, c));
        start = c;
    }

    // Merge the adjacent pair with the smallest negligible effect size until none is left.
    let pooled = |b: (usize, usize)| -> Vec<f64> { items[b.0..b.1].iter().flat_map(|it| it.values.iter().copied()).collect() };
    loop {
        let mut smallest: Option<(usize, f64)> = None;
        for i in 0..bounds.len().saturating_sub(1) {
            if let Some(d) = cohens_d(&pooled(bounds[i]), &pooled(bounds[i + 1])) {
                if d < negligible_d && smallest.is_none_or(|(_, sd)| d < sd) {
                    smallest = Some((i, d));
                }
            }
        }
        let Some((i, _)) = smallest else { break };
        bounds[i].1 = bounds[i + 1].1;
        bounds.remove(i + 1);
    }

    let groups = bounds
        .iter()
        .enumerate()
        .map(|(g, &b)| RankGroup {
            rank: g + 1,
            mean: mean(&pooled(b)),
            metrics: items[b.0..b.1]
                .iter()
                .map(|it| RankedMetric {
                    metric: it.name.to_string(),
                    mean: it.mean,
                    sd: sample_var(it.values).sqrt(),
                    rank: g + 1,
                })
                .collect(),
        })
        .collect();
    Ok(ScottKnottRanking { groups })
}
