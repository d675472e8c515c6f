//! Binomial logistic regression by iteratively reweighted least squares,
//! with sequential (Type-I) and hierarchical (Type-II) analysis of deviance.
//!
//! Metrics enter the design raw, with an intercept. A metric that is an exact
//! linear function of the intercept and the metrics before it is aliased:
//! it gets no coefficient and contributes zero sequential deviance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::importance::{self, ImportanceRow, ImportanceTable, Technique};
use crate::linalg;

pub const MAX_ITERATIONS: usize = 25;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;
/// Any |coefficient| beyond this stops the fit with the separation flag set.
pub const SEPARATION_CAP: f64 = 30.0;
/// Relative residual norm under which a design column counts as aliased.
pub const ALIAS_TOLERANCE: f64 = 1e-7;

/// Ordered, non-empty list of distinct metric names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelSpec(Vec<String>);

impl ModelSpec {
    pub fn new<S: Into<String>>(metrics: impl IntoIterator<Item = S>) -> Result<Self> {
        let metrics: Vec<String> = metrics.into_iter().map(Into::into).collect();
        if metrics.is_empty() {
            return Err(Error::InvalidSpec("empty model specification".into()));
        }
        for (i, m) in metrics.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::InvalidSpec("empty metric name".into()));
            }
            if metrics[..i].contains(m) {
                return Err(Error::InvalidSpec(format!("metric `{m}` listed twice")));
            }
        }
        Ok(Self(metrics))
    }

    /// All metrics of `d`, in column order.
    pub fn from_dataset(d: &Dataset) -> Result<Self> {
        Self::new(d.metric_names())
    }

    pub fn metrics(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Same metrics with `metric` moved to `position`.
    pub fn with_metric_at(&self, metric: &str, position: usize) -> Result<Self> {
        let mut rest: Vec<String> = self.0.iter().filter(|m| *m != metric).cloned().collect();
        if rest.len() == self.0.len() {
            return Err(Error::UnknownMetrics(vec![metric.to_string()]));
        }
        rest.insert(position.min(rest.len()), metric.to_string());
        Ok(Self(rest))
    }

    pub fn validate(&self, d: &Dataset) -> Result<()> {
        d.columns(&self.0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLogit {
    pub spec: ModelSpec,
    pub intercept: f64,
    /// One entry per spec metric; `None` when aliased.
    pub coefficients: Vec<Option<f64>>,
    /// Names of the estimated (non-aliased) metrics, in spec order.
    pub active: Vec<String>,
    pub aliased: Vec<String>,
    /// Inverse Fisher information over `[intercept, active...]`.
    pub covariance: Vec<Vec<f64>>,
    pub deviance: f64,
    pub null_deviance: f64,
    pub pearson_chi2: f64,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub n_rows: usize,
    pub n_params: usize,
}

impl FittedLogit {
    pub fn coefficient(&self, metric: &str) -> Option<f64> {
        let i = self.spec.metrics().iter().position(|m| m == metric)?;
        self.coefficients[i]
    }

    /// Standard error from the covariance diagonal.
    pub fn std_error(&self, metric: &str) -> Option<f64> {
        let i = self.active.iter().position(|m| m == metric)?;
        Some(self.covariance[i + 1][i + 1].sqrt())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.converged {
            w.push(format!("IRLS did not converge in {} iterations", self.iterations));
        }
        if self.separation {
            w.push(format!("coefficient exceeded |{SEPARATION_CAP}|: possible separation"));
        }
        if !self.aliased.is_empty() {
            w.push(format!("aliased metrics: {}", self.aliased.join(", ")));
        }
        w
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_mu(mu: f64) -> f64 {
    mu.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

fn binomial_deviance(y: &[u8], mu: &[f64]) -> f64 {
    -2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &m)| if yi == 1 { m.ln() } else { (1.0 - m).ln() })
        .sum::<f64>()
}

/// Deviance of the intercept-only model.
pub fn null_deviance(y: &[u8]) -> f64 {
    let n = y.len() as f64;
    let k = y.iter().filter(|&&v| v == 1).count() as f64;
    let p = k / n;
    let mut d = 0.0;
    if k > 0.0 {
        d -= 2.0 * k * p.ln();
    }
    if k < n {
        d -= 2.0 * (n - k) * (1.0 - p).ln();
    }
    d
}

/// Log-likelihood of `(intercept, beta)` for the given columns.
pub fn log_likelihood(columns: &[&[f64]], y: &[u8], intercept: f64, beta: &[f64]) -> f64 {
    (0..y.len())
        .map(|i| {
            let eta = intercept + columns.iter().zip(beta).map(|(c, b)| c[i] * b).sum::<f64>();
            // log(sigmoid(eta)) and log(1 - sigmoid(eta)) without cancellation
            let log1pexp = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            if y[i] == 1 {
                eta - log1pexp
            } else {
                -log1pexp
            }
        })
        .sum()
}

/// Gradient of [`log_likelihood`] over `[intercept, beta...]`.
pub fn score(columns: &[&[f64]], y: &[u8], intercept: f64, beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len() + 1];
    for i in 0..y.len() {
        let eta = intercept + columns.iter().zip(beta).map(|(c, b)| c[i] * b).sum::<f64>();
        let r = f64::from(y[i]) - sigmoid(eta);
        g[0] += r;
        for (j, c) in columns.iter().enumerate() {
            g[j + 1] += r * c[i];
        }
    }
    g
}

/// Which columns of `[1, cols...]` survive in-order rank detection.
fn alias_mask(cols: &[&[f64]], n: usize) -> Vec<bool> {
    let mut design = Vec::with_capacity(cols.len() + 1);
    design.push(vec![1.0; n]);
    design.extend(cols.iter().map(|c| c.to_vec()));
    let zero = vec![0.0; n];
    let ls = linalg::least_squares(&design, &zero, ALIAS_TOLERANCE);
    (1..=cols.len()).map(|j| !ls.kept.contains(&j)).collect()
}

struct IrlsFit {
    beta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
    converged: bool,
    separation: bool,
    iterations: usize,
}

/// IRLS on `[1, cols...]` (all columns assumed full rank).
fn irls(cols: &[&[f64]], y: &[u8]) -> IrlsFit {
    let n = y.len();
    let p = cols.len() + 1;
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let mut mu: Vec<f64> = yf.iter().map(|v| (v + 0.5) / 2.0).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| (m / (1.0 - m)).ln()).collect();
    let mut dev_old = binomial_deviance(y, &mu);
    let mut beta = vec![0.0; p];
    let mut deviance = dev_old;
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let mut weighted: Vec<Vec<f64>> = vec![Vec::with_capacity(n); p];
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let w = mu[i] * (1.0 - mu[i]);
            let sw = w.sqrt();
            z.push(sw * (eta[i] + (yf[i] - mu[i]) / w));
            weighted[0].push(sw);
            for (j, c) in cols.iter().enumerate() {
                weighted[j + 1].push(sw * c[i]);
            }
        }
        let ls = linalg::least_squares(&weighted, &z, 0.0);
        beta = ls.coef.iter().map(|c| c.unwrap_or(0.0)).collect();
        for i in 0..n {
            eta[i] = beta[0] + cols.iter().enumerate().map(|(j, c)| c[i] * beta[j + 1]).sum::<f64>();
            mu[i] = clamp_mu(sigmoid(eta[i]));
        }
        deviance = binomial_deviance(y, &mu);
        if beta.iter().any(|b| b.abs() > SEPARATION_CAP) {
            separation = true;
            break;
        }
        if (deviance - dev_old).abs() / (deviance.abs() + 0.1) < CONVERGENCE_TOLERANCE {
            converged = true;
            break;
        }
        dev_old = deviance;
    }
    IrlsFit {
        beta,
        mu,
        deviance,
        converged,
        separation,
        iterations,
    }
}

fn fit_columns(spec: &ModelSpec, cols: &[&[f64]], y: &[u8]) -> Result<FittedLogit> {
    let n = y.len();
    let mask = alias_mask(cols, n);
    let active_cols: Vec<&[f64]> = cols.iter().zip(&mask).filter(|(_, a)| !**a).map(|(c, _)| *c).collect();
    let n_params = active_cols.len() + 1;
    if n <= n_params {
        return Err(Error::NotEnoughRows { rows: n, params: n_params });
    }
    let fit = irls(&active_cols, y);

    // Fisher information at the final estimate.
    let mut weighted: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n_params];
    for i in 0..n {
        let sw = (fit.mu[i] * (1.0 - fit.mu[i])).sqrt();
        weighted[0].push(sw);
        for (j, c) in active_cols.iter().enumerate() {
            weighted[j + 1].push(sw * c[i]);
        }
    }
    let ls = linalg::least_squares(&weighted, &vec![0.0; n], 0.0);
    let covariance = if ls.kept.len() == n_params {
        linalg::inverse_gram(&ls.r)
    } else {
        vec![vec![f64::INFINITY; n_params]; n_params]
    };

    let mut coefficients = Vec::with_capacity(cols.len());
    let mut active = Vec::new();
    let mut aliased = Vec::new();
    let mut k = 1;
    for (name, &is_aliased) in spec.metrics().iter().zip(&mask) {
        if is_aliased {
            coefficients.push(None);
            aliased.push(name.clone());
        } else {
            coefficients.push(Some(fit.beta[k]));
            active.push(name.clone());
            k += 1;
        }
    }
    let pearson_chi2 = y
        .iter()
        .zip(&fit.mu)
        .map(|(&yi, &m)| (f64::from(yi) - m).powi(2) / (m * (1.0 - m)))
        .sum();
    Ok(FittedLogit {
        spec: spec.clone(),
        intercept: fit.beta[0],
        coefficients,
        active,
        aliased,
        covariance,
        deviance: fit.deviance,
        null_deviance: null_deviance(y),
        pearson_chi2,
        converged: fit.converged,
        separation: fit.separation,
        iterations: fit.iterations,
        n_rows: n,
        n_params,
    })
}

pub fn fit_logit(d: &Dataset, spec: &ModelSpec) -> Result<FittedLogit> {
    let cols = d.columns(spec.metrics())?;
    fit_columns(spec, &cols, d.label())
}

/// Probability of the defective class for every row of `d`.
pub fn predict_prob(model: &FittedLogit, d: &Dataset) -> Result<Vec<f64>> {
    let cols = d.columns(model.spec.metrics())?;
    let n = d.n_rows();
    Ok((0..n)
        .map(|i| {
            let eta = model.intercept
                + cols
                    .iter()
                    .zip(&model.coefficients)
                    .filter_map(|(c, b)| b.map(|b| b * c[i]))
                    .sum::<f64>();
            sigmoid(eta)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Type2Statistic {
    Wald,
    #[serde(rename = "LR")]
    Lr,
    F,
    Chisq,
}

impl Type2Statistic {
    pub fn technique(self) -> Technique {
        match self {
            Type2Statistic::Wald => Technique::Type2Wald,
            Type2Statistic::Lr => Technique::Type2Lr,
            Type2Statistic::F => Technique::Type2F,
            Type2Statistic::Chisq => Technique::Type2Chisq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub metric: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: Option<f64>,
    pub share: f64,
    pub aliased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub technique: Technique,
    pub rows: Vec<AnovaRow>,
    pub null_deviance: f64,
    pub residual_deviance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AnovaTable {
    pub fn statistic(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.statistic)
    }

    pub fn share(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.share)
    }

    pub fn to_importance(&self) -> ImportanceTable {
        ImportanceTable {
            technique: self.technique,
            rows: self
                .rows
                .iter()
                .map(|r| ImportanceRow {
                    metric: r.metric.clone(),
                    score: r.statistic,
                    sd: None,
                    share: r.share,
                    df: Some(r.df),
                    p_value: r.p_value,
                    degenerate: r.aliased,
                })
                .collect(),
            notes: self.notes.clone(),
        }
    }
}

fn chisq1_sf(x: f64) -> f64 {
    ChiSquared::new(1.0).expect("df > 0").sf(x)
}

fn build_table(technique: Technique, fit: &FittedLogit, rows: Vec<(String, f64, bool, Option<f64>)>, notes: Vec<String>) -> AnovaTable {
    let stats: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let shares = importance::shares(&stats);
    AnovaTable {
        technique,
        rows: rows
            .into_iter()
            .zip(shares)
            .map(|((metric, statistic, aliased, p_value), share)| AnovaRow {
                metric,
                statistic,
                df: usize::from(!aliased),
                p_value,
                share,
                aliased,
            })
            .collect(),
        null_deviance: fit.null_deviance,
        residual_deviance: fit.deviance,
        notes,
    }
}

fn with_fit_notes(fit: &FittedLogit) -> Vec<String> {
    fit.warnings()
}

/// Tolerance below which a negative deviance reduction is treated as rounding.
const NEGATIVE_SLACK: f64 = 1e-8;

fn clamp_reduction(x: f64, notes: &mut Vec<String>, metric: &str) -> f64 {
    if x < 0.0 {
        if x < -NEGATIVE_SLACK {
            notes.push(format!("negative deviance reduction {x:.3e} for `{metric}` clamped to 0"));
        }
        0.0
    } else {
        x
    }
}

/// Sequential analysis of deviance: each metric's deviance reduction when
/// added after the metrics before it.
pub fn anova_type1(d: &Dataset, spec: &ModelSpec) -> Result<AnovaTable> {
    let cols = d.columns(spec.metrics())?;
    let y = d.label();
    let full = fit_columns(spec, &cols, y)?;
    let alias: Vec<bool> = full.coefficients.iter().map(Option::is_none).collect();

    // Deviance after each prefix; aliased prefixes reuse the previous fit.
    let prefix_dev: Vec<Option<f64>> = (0..cols.len())
        .into_par_iter()
        .map(|i| {
            if alias[i] {
                return Ok(None);
            }
            if i + 1 == cols.len() {
                return Ok(Some(full.deviance));
            }
            let sub = ModelSpec(spec.metrics()[..=i].to_vec());
            Ok(Some(fit_columns(&sub, &cols[..=i], y)?.deviance))
        })
        .collect::<Result<_>>()?;

    let mut notes = with_fit_notes(&full);
    let mut prev = full.null_deviance;
    let mut rows = Vec::with_capacity(cols.len());
    for (i, name) in spec.metrics().iter().enumerate() {
        match prefix_dev[i] {
            None => rows.push((name.clone(), 0.0, true, None)),
            Some(dev) => {
                let ss = clamp_reduction(prev - dev, &mut notes, name);
                rows.push((name.clone(), ss, false, Some(chisq1_sf(ss))));
                prev = dev;
            }
        }
    }
    Ok(build_table(Technique::Type1, &full, rows, notes))
}

/// Hierarchical analysis for one statistic.
pub fn anova_type2(d: &Dataset, spec: &ModelSpec, statistic: Type2Statistic) -> Result<AnovaTable> {
    let all = anova_type2_all(d, spec)?;
    Ok(all
        .into_iter()
        .find(|t| t.technique == statistic.technique())
        .expect("all four statistics computed"))
}

/// Type-II tables for Wald, LR, F and Chisq from one shared set of fits.
pub fn anova_type2_all(d: &Dataset, spec: &ModelSpec) -> Result<Vec<AnovaTable>> {
    let cols = d.columns(spec.metrics())?;
    let y = d.label();
    let full = fit_columns(spec, &cols, y)?;
    type2_from_full(spec, &cols, y, &full)
}

fn type2_from_full(spec: &ModelSpec, cols: &[&[f64]], y: &[u8], full: &FittedLogit) -> Result<Vec<AnovaTable>> {
    let n_metrics = cols.len();
    let reduced_dev: Vec<Option<f64>> = (0..n_metrics)
        .into_par_iter()
        .map(|e| {
            if full.coefficients[e].is_none() {
                return Ok(None);
            }
            if n_metrics == 1 {
                return Ok(Some(full.null_deviance));
            }
            let names: Vec<String> = spec
                .metrics()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != e)
                .map(|(_, m)| m.clone())
                .collect();
            let sub_cols: Vec<&[f64]> = cols.iter().enumerate().filter(|(i, _)| *i != e).map(|(_, c)| *c).collect();
            Ok(Some(fit_columns(&ModelSpec(names), &sub_cols, y)?.deviance))
        })
        .collect::<Result<_>>()?;

    let resid_df = full.n_rows - full.n_params;
    let dispersion = full.pearson_chi2 / resid_df as f64;
    let f_dist = FisherSnedecor::new(1.0, resid_df as f64).ok();

    let mut lr_notes = with_fit_notes(full);
    let mut lr_rows = Vec::new();
    let mut wald_rows = Vec::new();
    let mut f_rows = Vec::new();
    for (e, name) in spec.metrics().iter().enumerate() {
        let Some(reduced) = reduced_dev[e] else {
            lr_rows.push((name.clone(), 0.0, true, None));
            wald_rows.push((name.clone(), 0.0, true, None));
            f_rows.push((name.clone(), 0.0, true, None));
            continue;
        };
        let lr = clamp_reduction(reduced - full.deviance, &mut lr_notes, name);
        lr_rows.push((name.clone(), lr, false, Some(chisq1_sf(lr))));

        let beta = full.coefficients[e].expect("non-aliased");
        let se = full.std_error(name).expect("active metric");
        let wald = if se.is_finite() && se > 0.0 { (beta / se).powi(2) } else { 0.0 };
        wald_rows.push((name.clone(), wald, false, Some(chisq1_sf(wald))));

        let f = if dispersion > 0.0 { lr / dispersion } else { 0.0 };
        let p = f_dist.as_ref().map(|dist| dist.sf(f));
        f_rows.push((name.clone(), f, false, p));
    }
    let base = with_fit_notes(full);
    let mut chisq_notes = base.clone();
    chisq_notes.push("Wald chi-square on the same fit; coincides with type2-wald for single-df terms".into());
    let mut f_notes = lr_notes.clone();
    f_notes.push(format!("dispersion (Pearson chi2 / residual df) = {dispersion:.6}"));
    Ok(vec![
        build_table(Technique::Type2Wald, full, wald_rows.clone(), base),
        build_table(Technique::Type2Lr, full, lr_rows, lr_notes),
        build_table(Technique::Type2F, full, f_rows, f_notes),
        build_table(Technique::Type2Chisq, full, wald_rows, chisq_notes),
    ])
}

/// Type-I plus the four Type-II tables, in [`Technique::ALL`] order.
pub fn anova_all(d: &Dataset, spec: &ModelSpec) -> Result<Vec<AnovaTable>> {
    let mut out = vec![anova_type1(d, spec)?];
    out.extend(anova_type2_all(d, spec)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, ClusterConfig, MetricColumn, SyntheticConfig};

    fn tiny(label: Vec<u8>, cols: Vec<(&str, Vec<f64>)>) -> Dataset {
        Dataset::new(
            "t",
            cols.into_iter().map(|(n, v)| MetricColumn::new(n, v)).collect(),
            label,
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        let label = vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let d = tiny(label, vec![("const", vec![2.0; 10])]);
        let fit = fit_logit(&d, &ModelSpec::new(["const"]).unwrap()).unwrap();
        assert_eq!(fit.aliased, vec!["const"]);
        assert!((fit.intercept - (3.0f64 / 7.0).ln()).abs() < 1e-8, "{}", fit.intercept);
        let expected = -2.0 * (3.0 * 0.3f64.ln() + 7.0 * 0.7f64.ln());
        assert!((expected - 12.2173).abs() < 1e-4);
        assert!((fit.deviance - expected).abs() < 1e-9);
        assert!((fit.deviance - fit.null_deviance).abs() < 1e-9);
        let p = predict_prob(&fit, &d).unwrap();
        assert!(p.iter().all(|v| (v - 0.3).abs() < 1e-8));
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let d = tiny(vec![0, 1, 0, 1], vec![("a", vec![1.0, 2.0, 3.0, 4.0])]);
        let mut fit = fit_logit(&d, &ModelSpec::new(["a"]).unwrap()).unwrap();
        fit.intercept = 0.0;
        fit.coefficients = vec![Some(0.0)];
        assert!(predict_prob(&fit, &d).unwrap().iter().all(|&p| p == 0.5));
        fit.coefficients = vec![Some(0.7)];
        let p = predict_prob(&fit, &d).unwrap();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn predict_requires_metrics() {
        let d = tiny(vec![0, 1, 0, 1, 1], vec![("a", vec![1.0, 2.0, 3.0, 4.0, 2.5])]);
        let fit = fit_logit(&d, &ModelSpec::new(["a"]).unwrap()).unwrap();
        let other = tiny(vec![0, 1], vec![("b", vec![1.0, 2.0])]);
        assert!(matches!(predict_prob(&fit, &other), Err(Error::UnknownMetrics(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(Vec::<String>::new()).is_err());
        assert!(ModelSpec::new(["a", "a"]).is_err());
        let s = ModelSpec::new(["a", "b", "c"]).unwrap();
        assert_eq!(s.with_metric_at("c", 0).unwrap().metrics(), &["c", "a", "b"]);
        assert_eq!(s.with_metric_at("a", 9).unwrap().metrics(), &["b", "c", "a"]);
    }

    fn correlated(seed: u64) -> Dataset {
        let cfg = SyntheticConfig {
            n_rows: 400,
            clusters: vec![
                ClusterConfig::uniform("c", 3, 0.5, 1.2),
                ClusterConfig::uniform("x", 1, 0.0, -0.6),
            ],
            noise_metrics: 1,
            combinations: vec![],
            intercept: -0.4,
        };
        synthesize(&cfg, seed).unwrap().dataset
    }

    #[test]
    fn duplicate_metric_gets_zero_sequential_deviance() {
        let base = correlated(1);
        let dup = MetricColumn::new("c1_copy", base.column("c1").unwrap().to_vec());
        let d = base.with_column(dup).unwrap();
        let t = anova_type1(&d, &ModelSpec::new(["c1", "c1_copy"]).unwrap()).unwrap();
        assert_eq!(t.statistic("c1_copy"), Some(0.0));
        assert!(t.rows[1].aliased);
        let swapped = anova_type1(&d, &ModelSpec::new(["c1_copy", "c1"]).unwrap()).unwrap();
        assert_eq!(swapped.statistic("c1"), Some(0.0));
        assert!((swapped.statistic("c1_copy").unwrap() - t.statistic("c1").unwrap()).abs() < 1e-9);
    }

    #[test]
    fn type1_telescopes() {
        for seed in 0..5 {
            let d = correlated(seed);
            let spec = ModelSpec::from_dataset(&d).unwrap();
            let t = anova_type1(&d, &spec).unwrap();
            let full = fit_logit(&d, &spec).unwrap();
            let total: f64 = t.rows.iter().map(|r| r.statistic).sum();
            assert!((total - (full.null_deviance - full.deviance)).abs() < 1e-8);
            let share: f64 = t.rows.iter().map(|r| r.share).sum();
            assert!((share - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn type2_is_order_free_and_type1_is_not() {
        let d = correlated(3);
        let a = ModelSpec::new(["c1", "c2", "c3", "x1", "noise1"]).unwrap();
        let b = ModelSpec::new(["noise1", "c3", "x1", "c2", "c1"]).unwrap();
        let ta = anova_type2_all(&d, &a).unwrap();
        let tb = anova_type2_all(&d, &b).unwrap();
        for (x, y) in ta.iter().zip(&tb) {
            for m in a.metrics() {
                let (sx, sy) = (x.statistic(m).unwrap(), y.statistic(m).unwrap());
                assert!((sx - sy).abs() < 1e-8, "{:?} {m}: {sx} vs {sy}", x.technique);
            }
        }
        let t1a = anova_type1(&d, &a).unwrap();
        let t1b = anova_type1(&d, &b).unwrap();
        assert!((t1a.statistic("c1").unwrap() - t1b.statistic("c1").unwrap()).abs() > 1.0);
    }

    #[test]
    fn single_metric_lr_equals_type1() {
        let d = correlated(5);
        let spec = ModelSpec::new(["x1"]).unwrap();
        let t1 = anova_type1(&d, &spec).unwrap();
        let lr = anova_type2(&d, &spec, Type2Statistic::Lr).unwrap();
        assert_eq!(t1.rows[0].statistic, lr.rows[0].statistic);
    }

    #[test]
    fn wald_close_to_lr_on_well_conditioned_fit() {
        let cfg = SyntheticConfig {
            n_rows: 2000,
            clusters: vec![
                ClusterConfig::uniform("a", 1, 0.0, 0.6),
                ClusterConfig::uniform("b", 1, 0.0, -0.4),
            ],
            noise_metrics: 0,
            combinations: vec![],
            intercept: 0.0,
        };
        let d = synthesize(&cfg, 2).unwrap().dataset;
        let spec = ModelSpec::from_dataset(&d).unwrap();
        let wald = anova_type2(&d, &spec, Type2Statistic::Wald).unwrap();
        let lr = anova_type2(&d, &spec, Type2Statistic::Lr).unwrap();
        for m in spec.metrics() {
            let (w, l) = (wald.statistic(m).unwrap(), lr.statistic(m).unwrap());
            assert!((w - l).abs() / l < 0.15, "{m}: wald {w} lr {l}");
        }
        let chisq = anova_type2(&d, &spec, Type2Statistic::Chisq).unwrap();
        assert_eq!(chisq.rows[0].statistic, wald.rows[0].statistic);
        assert!(!chisq.notes.is_empty());
    }

    #[test]
    fn f_statistic_uses_pearson_dispersion() {
        let d = correlated(8);
        let spec = ModelSpec::from_dataset(&d).unwrap();
        let fit = fit_logit(&d, &spec).unwrap();
        let phi = fit.pearson_chi2 / (fit.n_rows - fit.n_params) as f64;
        let lr = anova_type2(&d, &spec, Type2Statistic::Lr).unwrap();
        let f = anova_type2(&d, &spec, Type2Statistic::F).unwrap();
        for m in spec.metrics() {
            assert!((f.statistic(m).unwrap() - lr.statistic(m).unwrap() / phi).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum_and_matches_finite_differences() {
        let d = correlated(4);
        let spec = ModelSpec::from_dataset(&d).unwrap();
        let fit = fit_logit(&d, &spec).unwrap();
        assert!(fit.converged);
        let cols = d.columns(spec.metrics()).unwrap();
        let beta: Vec<f64> = fit.coefficients.iter().map(|c| c.unwrap()).collect();
        let g = score(&cols, d.label(), fit.intercept, &beta);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");

        let at = [0.3, -0.2, 0.5, 0.1, -0.4, 0.05];
        let g = score(&cols, d.label(), at[0], &at[1..]);
        let h = 1e-6;
        for k in 0..at.len() {
            let mut up = at;
            let mut dn = at;
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&cols, d.label(), up[0], &up[1..])
                - log_likelihood(&cols, d.label(), dn[0], &dn[1..]))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4, "component {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn covariance_symmetric_with_positive_diagonal() {
        let d = correlated(6);
        let fit = fit_logit(&d, &ModelSpec::from_dataset(&d).unwrap()).unwrap();
        let c = &fit.covariance;
        for i in 0..c.len() {
            assert!(c[i][i] > 0.0);
            for j in 0..c.len() {
                assert_eq!(c[i][j], c[j][i]);
            }
        }
        assert!(fit.deviance <= fit.null_deviance + 1e-8);
    }

    #[test]
    fn separation_is_flagged() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let label = (0..20).map(|i| u8::from(i >= 10)).collect();
        let d = tiny(label, vec![("x", x)]);
        let fit = fit_logit(&d, &ModelSpec::new(["x"]).unwrap()).unwrap();
        assert!(fit.separation);
        assert!(!fit.warnings().is_empty());
    }

    #[test]
    fn too_few_rows() {
        let d = tiny(vec![0, 1], vec![("a", vec![1.0, 2.0])]);
        assert!(matches!(
            fit_logit(&d, &ModelSpec::new(["a"]).unwrap()),
            Err(Error::NotEnoughRows { .. })
        ));
    }
}
