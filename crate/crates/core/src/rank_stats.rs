//! Rank-based statistics: Spearman correlation, Cliff's delta, plus the
//! Pearson/OLS pieces the VIF stage needs.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Romano et al. magnitude thresholds on |delta|.
pub const NEGLIGIBLE_BELOW: f64 = 0.147;
pub const WEAK_BELOW: f64 = 0.33;
pub const MEDIUM_BELOW: f64 = 0.474;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Weak,
    Medium,
    Strong,
}

impl Magnitude {
    /// Labels are strict-below: |delta| = 0.147 is already "weak".
    pub fn from_delta(delta: f64) -> Self {
        let a = delta.abs();
        if a < NEGLIGIBLE_BELOW {
            Magnitude::Negligible
        } else if a < WEAK_BELOW {
            Magnitude::Weak
        } else if a < MEDIUM_BELOW {
            Magnitude::Medium
        } else {
            Magnitude::Strong
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub delta: f64,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Set when either input has no rank variance; `rho` is then 0.
    pub constant_input: bool,
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: x.len() });
    }
    Ok(match pearson(&average_ranks(x), &average_ranks(y)) {
        Some(rho) => Spearman {
            rho,
            constant_input: false,
        },
        None => Spearman {
            rho: 0.0,
            constant_input: true,
        },
    })
}

/// Cliff's delta of `defective` over `clean`, by sorted counting.
pub fn cliffs_delta(defective: &[f64], clean: &[f64]) -> Result<EffectSize> {
    if defective.is_empty() || clean.is_empty() {
        return Err(Error::EmptyInput("cliffs_delta needs two non-empty samples"));
    }
    let mut sorted = clean.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &x in defective {
        let below = sorted.partition_point(|&y| y < x) as i64;
        let not_above = sorted.partition_point(|&y| y <= x) as i64;
        let above = sorted.len() as i64 - not_above;
        dominance += below - above;
    }
    let delta = dominance as f64 / (defective.len() as f64 * clean.len() as f64);
    Ok(EffectSize {
        delta,
        magnitude: Magnitude::from_delta(delta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub metric_names: Vec<String>,
    pub rho: Vec<Vec<f64>>,
    /// Metrics with zero rank variance (their off-diagonal entries are 0).
    pub constant: Vec<String>,
}

impl CorrelationMatrix {
    pub fn len(&self) -> usize {
        self.metric_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metric_names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metric_names.iter().position(|n| n == name)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.rho[self.index_of(a)?][self.index_of(b)?])
    }

    /// Restriction to `names`, in that order.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<CorrelationMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .ok_or_else(|| Error::UnknownMetrics(vec![n.as_ref().to_string()]))
            })
            .collect::<Result<_>>()?;
        Ok(CorrelationMatrix {
            metric_names: idx.iter().map(|&i| self.metric_names[i].clone()).collect(),
            rho: idx.iter().map(|&i| idx.iter().map(|&j| self.rho[i][j]).collect()).collect(),
            constant: self
                .constant
                .iter()
                .filter(|c| names.iter().any(|n| n.as_ref() == c.as_str()))
                .cloned()
                .collect(),
        })
    }
}

pub fn spearman_matrix(d: &Dataset) -> Result<CorrelationMatrix> {
    let p = d.n_metrics();
    if p < 2 {
        return Err(Error::TooShort { needed: 2, got: p });
    }
    if d.n_rows() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: d.n_rows(),
        });
    }
    let ranks: Vec<Vec<f64>> = d.metrics().iter().map(|c| average_ranks(&c.values)).collect();
    let mut rho = vec![vec![0.0; p]; p];
    let mut constant = Vec::new();
    for i in 0..p {
        rho[i][i] = 1.0;
        if pearson(&ranks[i], &ranks[i]).is_none() {
            constant.push(d.metrics()[i].name.clone());
        }
        for j in (i + 1)..p {
            let r = pearson(&ranks[i], &ranks[j]).unwrap_or(0.0);
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        metric_names: d.metric_names(),
        rho,
        constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub r_squared: f64,
    /// Residuals vanished: the target is an exact linear function of the predictors.
    pub perfect_fit: bool,
    /// Some predictors were collinear among themselves and were dropped.
    pub rank_deficient: bool,
}

/// Relative residual below which a fit is treated as exact.
const PERFECT_FIT_RSS: f64 = 1e-24;

/// R² of a least-squares fit of `target` on `predictors` with an intercept.
pub fn ols_r_squared(target: &[f64], predictors: &[&[f64]]) -> Result<OlsFit> {
    let n = target.len();
    for p in predictors {
        if p.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: p.len(),
            });
        }
    }
    if n < predictors.len() + 2 {
        return Err(Error::NotEnoughRows {
            rows: n,
            params: predictors.len() + 1,
        });
    }
    let mean = target.iter().sum::<f64>() / n as f64;
    let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        // A constant target is reproduced by the intercept alone.
        return Ok(OlsFit {
            r_squared: 1.0,
            perfect_fit: true,
            rank_deficient: false,
        });
    }
    let mut cols = Vec::with_capacity(predictors.len() + 1);
    cols.push(vec![1.0; n]);
    cols.extend(predictors.iter().map(|p| p.to_vec()));
    let ls = linalg::least_squares(&cols, target, 1e-7);
    let rank_deficient = ls.kept.len() < cols.len();
    if ls.rss <= PERFECT_FIT_RSS * tss {
        return Ok(OlsFit {
            r_squared: 1.0,
            perfect_fit: true,
            rank_deficient,
        });
    }
    Ok(OlsFit {
        r_squared: (1.0 - ls.rss / tss).clamp(0.0, 1.0),
        perfect_fit: false,
        rank_deficient,
    })
}
