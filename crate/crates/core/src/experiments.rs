//! End-to-end analyses: how correlated metrics and metric order change what
//! the interpretation techniques report, and whether removing correlated
//! metrics costs predictive performance.
//!
//! Every function here is a pure function of its inputs and seed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{self, BootstrapEvaluation, Learner, StabilityReport};
use crate::forest::{self, ForestConfig};
use crate::glm::{self, ModelSpec};
use crate::importance::{ImportanceTable, Technique};
use crate::mitigation::{self, varclus, MitigationConfig, MitigationReport};
use crate::rank_stats::{cliffs_delta, spearman_matrix, CorrelationMatrix, Magnitude};
use crate::seeding::derive_seed;
use crate::skesd::{self, ScoreSamples, ScottKnottRanking};

pub const MIN_BOOT: usize = 10;
const TAG_IMPORTANCE: u64 = 0x494D_5054;
const TAG_FOREST: u64 = 0x4652_5354;
const TAG_EVAL: u64 = 0x4556_414C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_boot: usize,
    pub forest: ForestConfig,
    pub alpha: f64,
    pub negligible_d: f64,
    pub mitigation: MitigationConfig,
    pub techniques: Vec<Technique>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_boot: evaluation::DEFAULT_N_BOOT,
            forest: ForestConfig::default(),
            alpha: skesd::DEFAULT_ALPHA,
            negligible_d: skesd::DEFAULT_NEGLIGIBLE_D,
            mitigation: MitigationConfig::default(),
            techniques: Technique::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot < MIN_BOOT {
            return Err(Error::InvalidConfig(format!("n_boot must be at least {MIN_BOOT}, got {}", self.n_boot)));
        }
        if self.techniques.is_empty() {
            return Err(Error::InvalidConfig("no techniques selected".into()));
        }
        Ok(())
    }
}

/// Importance tables for `techniques` (in that order) from one logistic fit
/// and one forest on `d`.
pub fn importance_tables(d: &Dataset, spec: &ModelSpec, techniques: &[Technique], forest_cfg: &ForestConfig) -> Result<Vec<ImportanceTable>> {
    let mut found: BTreeMap<Technique, ImportanceTable> = BTreeMap::new();
    if techniques.contains(&Technique::Type1) {
        found.insert(Technique::Type1, glm::anova_type1(d, spec)?.to_importance());
    }
    if techniques.iter().any(|t| t.is_logit() && *t != Technique::Type1) {
        for t in glm::anova_type2_all(d, spec)? {
            found.insert(t.technique, t.to_importance());
        }
    }
    if techniques.iter().any(|t| !t.is_logit()) {
        let f = forest::fit_forest(d, spec, forest_cfg)?;
        if techniques.iter().any(|t| matches!(t, Technique::Perm | Technique::PermScaled)) {
            for t in forest::forest_importances(&f, d, forest_cfg.seed)? {
                found.insert(t.technique, t);
            }
        } else {
            found.insert(Technique::Gini, forest::gini_importance(&f, false));
            found.insert(Technique::GiniScaled, forest::gini_importance(&f, true));
        }
    }
    Ok(techniques.iter().map(|t| found.remove(t).expect("computed above")).collect())
}

/// Per-technique importance score distributions over bootstrap resamples.
pub fn bootstrap_importance(d: &Dataset, spec: &ModelSpec, cfg: &ExperimentConfig, seed: u64) -> Result<BTreeMap<Technique, ScoreSamples>> {
    cfg.validate()?;
    spec.validate(d)?;
    let per_iter: Vec<Vec<ImportanceTable>> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|i| {
            let r = evaluation::resample(d.label(), derive_seed(seed, &[TAG_IMPORTANCE]), i)?;
            let train = d.take_rows(&r.inbag)?;
            let forest_cfg = ForestConfig {
                seed: derive_seed(seed, &[TAG_FOREST, i as u64]),
                ..cfg.forest.clone()
            };
            importance_tables(&train, spec, &cfg.techniques, &forest_cfg)
        })
        .collect::<Result<_>>()?;

    let mut out = BTreeMap::new();
    for (k, &technique) in cfg.techniques.iter().enumerate() {
        let metrics = per_iter[0][k].metrics();
        let samples = metrics
            .iter()
            .map(|m| {
                let v = per_iter.iter().map(|tables| tables[k].score(m).expect("same metrics")).collect();
                (m.clone(), v)
            })
            .collect();
        out.insert(technique, ScoreSamples::new(samples)?);
    }
    Ok(out)
}

/// Scott-Knott ESD ranking per technique of the bootstrap importance scores.
pub fn rank_metrics(d: &Dataset, spec: &ModelSpec, cfg: &ExperimentConfig, seed: u64) -> Result<BTreeMap<Technique, ScottKnottRanking>> {
    bootstrap_importance(d, spec, cfg, seed)?
        .into_iter()
        .map(|(t, s)| Ok((t, skesd::scott_knott_esd(&s, cfg.alpha, cfg.negligible_d)?)))
        .collect()
}

/// Highest-ranked metric: the rank-1 metric with the largest mean score.
pub fn top_metric(r: &ScottKnottRanking) -> &str {
    &r.groups[0].metrics[0].metric
}

// ---------------------------------------------------------------- prevalence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEffect {
    pub metric: String,
    pub delta: f64,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrevalence {
    pub members: Vec<String>,
    pub magnitudes: Vec<Magnitude>,
    pub all_strong: bool,
    pub same_magnitude: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub rho_threshold: f64,
    pub metrics: Vec<MetricEffect>,
    /// Clusters with at least two members.
    pub clusters: Vec<ClusterPrevalence>,
    pub n_singletons: usize,
    pub any_all_strong_cluster: bool,
}

/// Effect size of every metric on defect-proneness, and how the correlated
/// clusters line up with those effect sizes.
pub fn prevalence_analysis(d: &Dataset, rho_threshold: f64) -> Result<PrevalenceReport> {
    let metrics: Vec<MetricEffect> = d
        .metrics()
        .iter()
        .map(|c| {
            let (def, clean) = d.split_by_label(&c.values);
            let e = cliffs_delta(&def, &clean)?;
            Ok(MetricEffect {
                metric: c.name.clone(),
                delta: e.delta,
                magnitude: e.magnitude,
            })
        })
        .collect::<Result<_>>()?;
    let groups = if d.n_metrics() >= 2 {
        varclus(&spearman_matrix(d)?, rho_threshold)?.clusters
    } else {
        vec![d.metric_names()]
    };
    let magnitude_of = |m: &str| metrics.iter().find(|e| e.metric == m).expect("known metric").magnitude;
    let clusters: Vec<ClusterPrevalence> = groups
        .iter()
        .filter(|g| g.len() > 1)
        .map(|g| {
            let magnitudes: Vec<Magnitude> = g.iter().map(|m| magnitude_of(m)).collect();
            ClusterPrevalence {
                members: g.clone(),
                all_strong: magnitudes.iter().all(|m| *m == Magnitude::Strong),
                same_magnitude: magnitudes.windows(2).all(|w| w[0] == w[1]),
                magnitudes,
            }
        })
        .collect();
    Ok(PrevalenceReport {
        rho_threshold,
        metrics,
        n_singletons: groups.iter().filter(|g| g.len() == 1).count(),
        any_all_strong_cluster: clusters.iter().any(|c| c.all_strong),
        clusters,
    })
}

// ------------------------------------------------------------------ dilution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionPoint {
    pub k: usize,
    pub technique: Technique,
    pub spec: Vec<String>,
    pub target_share: f64,
    /// `(share_k - share_0) / share_0`; `None` when the baseline share is 0.
    pub relative_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionReport {
    pub target: String,
    pub pool: Vec<String>,
    pub pool_rho: Vec<f64>,
    pub base_spec: Vec<String>,
    pub points: Vec<DilutionPoint>,
}

impl DilutionReport {
    pub fn shares(&self, technique: Technique) -> Vec<f64> {
        self.points.iter().filter(|p| p.technique == technique).map(|p| p.target_share).collect()
    }
}

/// Adds the pool metrics one at a time, each at the front of the spec, and
/// tracks the target's importance share. `d` must hold the base metrics and
/// the pool metrics.
pub fn dilution_analysis(
    d: &Dataset,
    base_spec: &ModelSpec,
    pool: &[String],
    target: &str,
    techniques: &[Technique],
    forest_cfg: &ForestConfig,
    rho_threshold: f64,
) -> Result<DilutionReport> {
    if !base_spec.metrics().iter().any(|m| m == target) {
        return Err(Error::InvalidSpec(format!("target `{target}` is not in the base specification")));
    }
    if let Some(m) = pool.iter().find(|m| base_spec.metrics().contains(m)) {
        return Err(Error::InvalidSpec(format!("pool metric `{m}` is already in the base specification")));
    }
    let target_col = d.column(target).ok_or_else(|| Error::UnknownMetrics(vec![target.to_string()]))?;
    let pool_cols = d.columns(pool)?;
    let mut pool_rho = Vec::with_capacity(pool.len());
    for (name, col) in pool.iter().zip(&pool_cols) {
        let rho = crate::rank_stats::spearman(col, target_col)?.rho;
        if rho.abs() <= rho_threshold {
            return Err(Error::NotCorrelated {
                metric: name.clone(),
                target: target.to_string(),
                rho,
            });
        }
        pool_rho.push(rho);
    }

    let specs: Vec<ModelSpec> = (0..=pool.len())
        .map(|k| {
            let mut names: Vec<String> = pool[..k].iter().rev().cloned().collect();
            names.extend(base_spec.metrics().iter().cloned());
            ModelSpec::new(names)
        })
        .collect::<Result<_>>()?;
    let tables: Vec<Vec<ImportanceTable>> = specs
        .par_iter()
        .map(|s| importance_tables(d, s, techniques, forest_cfg))
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (ti, &technique) in techniques.iter().enumerate() {
        let base = tables[0][ti].share(target).expect("target in spec");
        for (k, spec) in specs.iter().enumerate() {
            let share = tables[k][ti].share(target).expect("target in spec");
            points.push(DilutionPoint {
                k,
                technique,
                spec: spec.metrics().to_vec(),
                target_share: share,
                relative_difference: (base > 0.0).then(|| (share - base) / base),
            });
        }
    }
    Ok(DilutionReport {
        target: target.to_string(),
        pool: pool.to_vec(),
        pool_rho,
        base_spec: base_spec.metrics().to_vec(),
        points,
    })
}

// ---------------------------------------------------------------- order swap

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSwapEntry {
    pub technique: Technique,
    pub target_first: ImportanceTable,
    pub target_last: ImportanceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSwapReport {
    pub target: String,
    pub spec_first: Vec<String>,
    pub spec_last: Vec<String>,
    /// Smallest pairwise |rho| among the metrics.
    pub min_abs_rho: f64,
    pub entries: Vec<OrderSwapEntry>,
}

impl OrderSwapReport {
    pub fn entry(&self, technique: Technique) -> Option<&OrderSwapEntry> {
        self.entries.iter().find(|e| e.technique == technique)
    }
}

/// Importance tables with `target` first and then last, the other metrics
/// keeping their relative order.
pub fn order_swap_analysis(d: &Dataset, metrics: &[String], target: &str, techniques: &[Technique], forest_cfg: &ForestConfig) -> Result<OrderSwapReport> {
    let base = ModelSpec::new(metrics.iter().cloned())?;
    let first = base.with_metric_at(target, 0)?;
    let last = base.with_metric_at(target, metrics.len())?;
    let corr = spearman_matrix(&d.select(metrics)?)?;
    let min_abs_rho = (0..corr.len())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| corr.rho[i][j].abs())
        .fold(f64::INFINITY, f64::min);
    let a = importance_tables(d, &first, techniques, forest_cfg)?;
    let b = importance_tables(d, &last, techniques, forest_cfg)?;
    Ok(OrderSwapReport {
        target: target.to_string(),
        spec_first: first.metrics().to_vec(),
        spec_last: last.metrics().to_vec(),
        min_abs_rho: if min_abs_rho.is_finite() { min_abs_rho } else { 1.0 },
        entries: techniques
            .iter()
            .zip(a.into_iter().zip(b))
            .map(|(&technique, (target_first, target_last))| OrderSwapEntry {
                technique,
                target_first,
                target_last,
            })
            .collect(),
    })
}

// ----------------------------------------------------------------------- RQ1

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDifferenceResult {
    pub technique: Technique,
    pub m_high: String,
    pub mitigated_rank: usize,
    /// Correlated partner prepended to the non-mitigated spec.
    pub m_c: Option<String>,
    pub rho: Option<f64>,
    pub non_mitigated_rank: Option<usize>,
    /// Non-mitigated rank minus mitigated rank.
    pub difference: Option<i64>,
    pub applicable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub mitigation: MitigationReport,
    pub results: Vec<RankDifferenceResult>,
}

/// Removed metric most correlated with `metric`, if above the threshold.
fn correlated_partner(corr: &CorrelationMatrix, metric: &str, candidates: &[String], threshold: f64) -> Option<(String, f64)> {
    candidates
        .iter()
        .filter_map(|c| corr.get(metric, c).map(|rho| (c.clone(), rho)))
        .filter(|(_, rho)| rho.abs() > threshold)
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then_with(|| b.0.cmp(&a.0)))
}

/// Rank of each technique's top metric before and after one correlated
/// partner is put back at the front of the specification.
pub fn rq1(d: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Rq1Report> {
    cfg.validate()?;
    let (mitigated, report) = mitigation::mitigate(d, &cfg.mitigation)?;
    let corr = spearman_matrix(d)?;
    let survivors = mitigated.metric_names();
    let removed: Vec<String> = d.metric_names().into_iter().filter(|m| !survivors.contains(m)).collect();
    let base = rank_metrics(&mitigated, &ModelSpec::new(survivors.clone())?, cfg, seed)?;

    // Techniques sharing a (m_high, m_c) pair share one re-polluted run.
    let mut pending: BTreeMap<(String, String), Vec<Technique>> = BTreeMap::new();
    let mut results = Vec::new();
    for &t in &cfg.techniques {
        let m_high = top_metric(&base[&t]).to_string();
        let mitigated_rank = base[&t].rank(&m_high).expect("ranked");
        match correlated_partner(&corr, &m_high, &removed, cfg.mitigation.rho_threshold) {
            None => results.push(RankDifferenceResult {
                technique: t,
                m_high,
                mitigated_rank,
                m_c: None,
                rho: None,
                non_mitigated_rank: None,
                difference: None,
                applicable: false,
                note: Some("no removed metric is correlated with the top metric".into()),
            }),
            Some((m_c, rho)) => {
                pending.entry((m_high.clone(), m_c.clone())).or_default().push(t);
                results.push(RankDifferenceResult {
                    technique: t,
                    m_high,
                    mitigated_rank,
                    m_c: Some(m_c),
                    rho: Some(rho),
                    non_mitigated_rank: None,
                    difference: None,
                    applicable: true,
                    note: None,
                });
            }
        }
    }
    for ((m_high, m_c), techniques) in pending {
        let mut names = vec![m_c.clone(), m_high.clone()];
        names.extend(survivors.iter().filter(|m| **m != m_high).cloned());
        let sub_cfg = ExperimentConfig {
            techniques: techniques.clone(),
            ..cfg.clone()
        };
        let ranked = rank_metrics(&d.select(&names)?, &ModelSpec::new(names.clone())?, &sub_cfg, seed)?;
        for r in results.iter_mut().filter(|r| techniques.contains(&r.technique)) {
            let nm = ranked[&r.technique].rank(&m_high).expect("ranked");
            r.non_mitigated_rank = Some(nm);
            r.difference = Some(nm as i64 - r.mitigated_rank as i64);
        }
    }
    Ok(Rq1Report {
        mitigation: report,
        results,
    })
}

// ----------------------------------------------------------------------- RQ2

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderConsistency {
    pub technique: Technique,
    pub metric: String,
    /// Rank of `metric` with it placed at position 1, 2, ...
    pub ranks_by_position: Vec<usize>,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub spec: Vec<String>,
    pub results: Vec<OrderConsistency>,
}

/// Moves each technique's top metric through every position of the spec and
/// checks whether it stays at rank 1. `d` is used as given (typically the
/// mitigated dataset).
pub fn rq2(d: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Rq2Report> {
    cfg.validate()?;
    let spec = ModelSpec::from_dataset(d)?;
    let base = rank_metrics(d, &spec, cfg, seed)?;
    let mut by_metric: BTreeMap<String, Vec<Technique>> = BTreeMap::new();
    for &t in &cfg.techniques {
        by_metric.entry(top_metric(&base[&t]).to_string()).or_default().push(t);
    }
    let mut ranks: BTreeMap<Technique, Vec<usize>> = BTreeMap::new();
    for (metric, techniques) in &by_metric {
        let sub_cfg = ExperimentConfig {
            techniques: techniques.clone(),
            ..cfg.clone()
        };
        for pos in 0..spec.len() {
            let moved = spec.with_metric_at(metric, pos)?;
            let ranked = rank_metrics(d, &moved, &sub_cfg, seed)?;
            for t in techniques {
                ranks.entry(*t).or_default().push(ranked[t].rank(metric).expect("ranked"));
            }
        }
    }
    let results = cfg
        .techniques
        .iter()
        .map(|t| {
            let r = ranks.remove(t).expect("every technique ranked");
            OrderConsistency {
                technique: *t,
                metric: top_metric(&base[t]).to_string(),
                consistent: r.iter().all(|&x| x == 1),
                ranks_by_position: r,
            }
        })
        .collect();
    Ok(Rq2Report {
        spec: spec.metrics().to_vec(),
        results,
    })
}

// ----------------------------------------------------------------------- RQ3

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMatrix {
    pub techniques: Vec<Technique>,
    /// Fraction of datasets where the two techniques' top-k sets intersect.
    pub cells: Vec<Vec<f64>>,
}

impl ConsistencyMatrix {
    pub fn get(&self, a: Technique, b: Technique) -> Option<f64> {
        let i = self.techniques.iter().position(|t| *t == a)?;
        let j = self.techniques.iter().position(|t| *t == b)?;
        Some(self.cells[i][j])
    }

    fn from_top_sets(techniques: &[Technique], per_dataset: &[BTreeMap<Technique, Vec<String>>]) -> Self {
        let n = per_dataset.len() as f64;
        let cells = techniques
            .iter()
            .map(|a| {
                techniques
                    .iter()
                    .map(|b| {
                        let hits = per_dataset
                            .iter()
                            .filter(|tops| tops[a].iter().any(|m| tops[b].contains(m)))
                            .count();
                        hits as f64 / n
                    })
                    .collect()
            })
            .collect();
        Self {
            techniques: techniques.to_vec(),
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq3Entry {
    pub k: usize,
    pub non_mitigated: ConsistencyMatrix,
    pub mitigated: ConsistencyMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq3Report {
    pub datasets: Vec<String>,
    pub entries: Vec<Rq3Entry>,
}

/// Agreement between techniques on their top-k metrics, before and after
/// mitigation, as a fraction of the datasets.
pub fn rq3(datasets: &[Dataset], cfg: &ExperimentConfig, seed: u64, ks: &[usize]) -> Result<Rq3Report> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::EmptyInput("no datasets"));
    }
    let mut rankings_nm = Vec::new();
    let mut rankings_m = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        let s = derive_seed(seed, &[i as u64]);
        rankings_nm.push(rank_metrics(d, &ModelSpec::from_dataset(d)?, cfg, s)?);
        let (mitigated, _) = mitigation::mitigate(d, &cfg.mitigation)?;
        rankings_m.push(rank_metrics(&mitigated, &ModelSpec::from_dataset(&mitigated)?, cfg, s)?);
    }
    let tops = |rankings: &[BTreeMap<Technique, ScottKnottRanking>], k: usize| -> Result<Vec<BTreeMap<Technique, Vec<String>>>> {
        rankings
            .iter()
            .map(|r| r.iter().map(|(t, ranking)| Ok((*t, ranking.top_k(k)?))).collect())
            .collect()
    };
    let entries = ks
        .iter()
        .map(|&k| {
            Ok(Rq3Entry {
                k,
                non_mitigated: ConsistencyMatrix::from_top_sets(&cfg.techniques, &tops(&rankings_nm, k)?),
                mitigated: ConsistencyMatrix::from_top_sets(&cfg.techniques, &tops(&rankings_m, k)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Rq3Report {
        datasets: datasets.iter().map(|d| d.name().to_string()).collect(),
        entries,
    })
}

// ----------------------------------------------------------------------- RQ4

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq4Learner {
    pub learner: Learner,
    pub non_mitigated: BootstrapEvaluation,
    pub mitigated: BootstrapEvaluation,
    pub comparison: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq4Report {
    pub mitigation: MitigationReport,
    pub learners: Vec<Rq4Learner>,
}

/// Bootstrap performance of both learners with and without the correlated
/// metrics, on identical resamples.
pub fn rq4(d: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Rq4Report> {
    cfg.validate()?;
    let (mitigated, report) = mitigation::mitigate(d, &cfg.mitigation)?;
    let eval_seed = derive_seed(seed, &[TAG_EVAL]);
    let learners = [Learner::Logit, Learner::Forest(cfg.forest.clone())]
        .into_iter()
        .map(|learner| {
            let nm = evaluation::bootstrap_evaluate(d, &ModelSpec::from_dataset(d)?, &learner, cfg.n_boot, eval_seed)?;
            let m = evaluation::bootstrap_evaluate(&mitigated, &ModelSpec::from_dataset(&mitigated)?, &learner, cfg.n_boot, eval_seed)?;
            Ok(Rq4Learner {
                comparison: evaluation::compare(&nm, &m)?,
                learner,
                non_mitigated: nm,
                mitigated: m,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Rq4Report {
        mitigation: report,
        learners,
    })
}
