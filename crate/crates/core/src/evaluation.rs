//! Out-of-sample bootstrap validation: AUC, F-measure and MCC over repeated
//! bootstrap fits, and the comparison of two such runs.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig};
use crate::glm::{self, ModelSpec};
use crate::rank_stats::{cliffs_delta, EffectSize};
use crate::seeding::{derive_seed, rng_for};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_N_BOOT: usize = 100;
/// Consecutive degenerate resamples tolerated per iteration.
pub const MAX_RETRIES: usize = 20;

const TAG_BOOT: u64 = 0x424F_4F54;
const TAG_FOREST: u64 = 0x4652_5354;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A measure value that may have hit a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guarded {
    pub value: f64,
    pub degenerate: bool,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

/// Rows with score above `threshold` are predicted defective.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

pub fn f_measure(cm: &ConfusionMatrix) -> Guarded {
    let (tp, fp, fn_) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64);
    if cm.tp + cm.fp == 0 || cm.tp + cm.fn_ == 0 || cm.tp == 0 {
        return Guarded {
            value: 0.0,
            degenerate: true,
        };
    }
    let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
    Guarded {
        value: 2.0 * p * r / (p + r),
        degenerate: false,
    }
}

pub fn mcc(cm: &ConfusionMatrix) -> Guarded {
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let marginals = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if marginals.contains(&0.0) {
        return Guarded {
            value: 0.0,
            degenerate: true,
        };
    }
    let denom = marginals.iter().product::<f64>().sqrt();
    Guarded {
        value: ((tp * tn - fp * fn_) / denom).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Area under the ROC curve: the share of (defective, clean) pairs where the
/// defective row scores higher, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut clean: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(&s, _)| s).collect();
    let n_def = labels.iter().filter(|&&y| y == 1).count();
    if n_def == 0 || clean.is_empty() {
        return Err(Error::SingleClassLabel(if n_def == 0 { "clean" } else { "defective" }));
    }
    clean.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, kept integral so the result is exact.
    let mut twice_u: u64 = 0;
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 1) {
        let below = clean.partition_point(|&c| c < s) as u64;
        let not_above = clean.partition_point(|&c| c <= s) as u64;
        twice_u += 2 * below + (not_above - below);
    }
    Ok(twice_u as f64 / (2 * n_def * clean.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "lowercase")]
pub enum Learner {
    Logit,
    Forest(ForestConfig),
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Logit => "logit",
            Learner::Forest(_) => "forest",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Auc,
    FMeasure,
    Mcc,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Auc, Measure::FMeasure, Measure::Mcc];

    pub fn id(self) -> &'static str {
        match self {
            Measure::Auc => "auc",
            Measure::FMeasure => "f_measure",
            Measure::Mcc => "mcc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEvaluation {
    pub learner: Learner,
    pub n_boot: usize,
    pub seed: u64,
    pub auc: Vec<f64>,
    pub f_measure: Vec<f64>,
    pub mcc: Vec<f64>,
    pub oob_fraction: Vec<f64>,
    /// Iterations whose F-measure or MCC hit a zero denominator.
    pub degenerate_f: usize,
    pub degenerate_mcc: usize,
    /// Total resamples rejected for lacking a class in-bag or out-of-bag.
    pub rejected_resamples: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 || x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

impl BootstrapEvaluation {
    pub fn values(&self, m: Measure) -> &[f64] {
        match m {
            Measure::Auc => &self.auc,
            Measure::FMeasure => &self.f_measure,
            Measure::Mcc => &self.mcc,
        }
    }

    pub fn mean(&self, m: Measure) -> f64 {
        mean(self.values(m))
    }

    pub fn sd(&self, m: Measure) -> f64 {
        sd(self.values(m))
    }

    pub fn mean_oob_fraction(&self) -> f64 {
        mean(&self.oob_fraction)
    }
}

/// A bootstrap draw with both classes present in-bag and out-of-bag.
#[derive(Debug, Clone, PartialEq)]
pub struct Resample {
    pub inbag: Vec<usize>,
    pub oob: Vec<usize>,
    pub rejected: usize,
}

/// Draws the resample for `iteration`, retrying with fresh sub-seeds.
pub fn resample(label: &[u8], seed: u64, iteration: usize) -> Result<Resample> {
    let n = label.len();
    for attempt in 0..=MAX_RETRIES {
        let mut rng = rng_for(seed, &[TAG_BOOT, iteration as u64, attempt as u64]);
        let inbag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut seen = vec![false; n];
        inbag.iter().for_each(|&i| seen[i] = true);
        let oob: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
        let has_both = |idx: &[usize]| {
            let ones = idx.iter().filter(|&&i| label[i] == 1).count();
            ones > 0 && ones < idx.len()
        };
        if has_both(&inbag) && has_both(&oob) {
            return Ok(Resample {
                inbag,
                oob,
                rejected: attempt,
            });
        }
    }
    Err(Error::DegenerateBootstrap(MAX_RETRIES + 1))
}

/// Fits `learner` on `train` and scores `test`.
pub fn fit_and_score(train: &Dataset, test: &Dataset, spec: &ModelSpec, learner: &Learner, forest_seed: u64) -> Result<Vec<f64>> {
    match learner {
        Learner::Logit => glm::predict_prob(&glm::fit_logit(train, spec)?, test),
        Learner::Forest(cfg) => {
            let cfg = ForestConfig {
                seed: forest_seed,
                ..cfg.clone()
            };
            forest::predict_prob_forest(&forest::fit_forest(train, spec, &cfg)?, test)
        }
    }
}

struct Iteration {
    auc: f64,
    f: Guarded,
    mcc: Guarded,
    oob_fraction: f64,
    rejected: usize,
}

pub fn bootstrap_evaluate(d: &Dataset, spec: &ModelSpec, learner: &Learner, n_boot: usize, seed: u64) -> Result<BootstrapEvaluation> {
    if n_boot == 0 {
        return Err(Error::InvalidConfig("n_boot must be at least 1".into()));
    }
    spec.validate(d)?;
    let iterations: Vec<Iteration> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let r = resample(d.label(), seed, i)?;
            let train = d.take_rows(&r.inbag)?;
            let test = d.take_rows(&r.oob)?;
            let scores = fit_and_score(&train, &test, spec, learner, derive_seed(seed, &[TAG_FOREST, i as u64]))?;
            let cm = confusion(&scores, test.label(), DEFAULT_THRESHOLD)?;
            Ok(Iteration {
                auc: auc(&scores, test.label())?,
                f: f_measure(&cm),
                mcc: mcc(&cm),
                oob_fraction: r.oob.len() as f64 / d.n_rows() as f64,
                rejected: r.rejected,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BootstrapEvaluation {
        learner: learner.clone(),
        n_boot,
        seed,
        auc: iterations.iter().map(|it| it.auc).collect(),
        f_measure: iterations.iter().map(|it| it.f.value).collect(),
        mcc: iterations.iter().map(|it| it.mcc.value).collect(),
        oob_fraction: iterations.iter().map(|it| it.oob_fraction).collect(),
        degenerate_f: iterations.iter().filter(|it| it.f.degenerate).count(),
        degenerate_mcc: iterations.iter().filter(|it| it.mcc.degenerate).count(),
        rejected_resamples: iterations.iter().map(|it| it.rejected).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureComparison {
    pub measure: Measure,
    /// Per-iteration non-mitigated minus mitigated, in percentage points.
    pub differences_pp: Vec<f64>,
    pub mean_difference_pp: f64,
    /// Non-mitigated distribution over the mitigated one.
    pub effect: EffectSize,
    /// sd(non-mitigated) / sd(mitigated); `None` when either sd is zero.
    pub stability_ratio: Option<f64>,
    pub degenerate_ratio: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub measures: Vec<MeasureComparison>,
}

impl StabilityReport {
    pub fn get(&self, m: Measure) -> &MeasureComparison {
        self.measures.iter().find(|c| c.measure == m).expect("all measures present")
    }
}

pub fn compare(non_mitigated: &BootstrapEvaluation, mitigated: &BootstrapEvaluation) -> Result<StabilityReport> {
    if non_mitigated.n_boot != mitigated.n_boot {
        return Err(Error::LengthMismatch {
            left: non_mitigated.n_boot,
            right: mitigated.n_boot,
        });
    }
    let measures = Measure::ALL
        .iter()
        .map(|&m| {
            let (a, b) = (non_mitigated.values(m), mitigated.values(m));
            let differences_pp: Vec<f64> = a.iter().zip(b).map(|(x, y)| 100.0 * (x - y)).collect();
            let (sa, sb) = (sd(a), sd(b));
            let stability_ratio = (sa > 0.0 && sb > 0.0).then(|| sa / sb);
            Ok(MeasureComparison {
                measure: m,
                mean_difference_pp: mean(&differences_pp),
                differences_pp,
                effect: cliffs_delta(a, b)?,
                stability_ratio,
                degenerate_ratio: stability_ratio.is_none(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StabilityReport { measures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, ClusterConfig, MetricColumn, SyntheticConfig};
    use crate::rank_stats::Magnitude;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u64;
        let (mut nd, mut nc) = (0u64, 0u64);
        for (i, &yi) in labels.iter().enumerate() {
            if yi == 1 {
                nd += 1;
            } else {
                nc += 1;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2 * nd * nc) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.3, 0.5, 0.1], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClassLabel(_))));
    }

    #[test]
    fn f_and_mcc_examples() {
        let cm = |tp, fp, tn, fn_| ConfusionMatrix { tp, fp, tn, fn_ };
        assert_eq!(f_measure(&cm(5, 0, 0, 0)).value, 1.0);
        assert!((f_measure(&cm(3, 1, 0, 2)).value - 2.0 / 3.0).abs() < 1e-12);
        let g = f_measure(&cm(0, 2, 3, 1));
        assert!(g.value == 0.0 && g.degenerate);
        assert_eq!(mcc(&cm(5, 0, 5, 0)).value, 1.0);
        assert_eq!(mcc(&cm(0, 5, 0, 5)).value, -1.0);
        assert!((mcc(&cm(3, 1, 4, 2)).value - 10.0 / 600f64.sqrt()).abs() < 1e-12);
        assert!(mcc(&cm(3, 0, 0, 2)).degenerate);
        let c = confusion(&[0.9, 0.5, 0.2, 0.7], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!(c, cm(1, 1, 1, 1));
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn mcc_near_zero_for_shuffled_labels() {
        let mut rng = rng_for(1, &[]);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = (0..1000).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let cm = confusion(&scores, &labels, 0.5).unwrap();
        assert!(mcc(&cm).value.abs() < 0.1);
    }

    proptest! {
        #[test]
        fn auc_matches_enumeration(
            rows in proptest::collection::vec((0u8..6, any::<bool>()), 2..60),
        ) {
            let mut labels: Vec<u8> = rows.iter().map(|r| u8::from(r.1)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let scores: Vec<f64> = rows.iter().map(|r| f64::from(r.0) / 5.0).collect();
            let a = auc(&scores, &labels).unwrap();
            prop_assert_eq!(a, brute_auc(&scores, &labels));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            prop_assert_eq!(a, auc(&mono, &labels).unwrap());
        }
    }

    fn separable(n: usize) -> Dataset {
        let cfg = SyntheticConfig {
            n_rows: n,
            clusters: vec![ClusterConfig::uniform("s", 1, 0.0, 8.0), ClusterConfig::uniform("x", 1, 0.0, 0.0)],
            noise_metrics: 1,
            combinations: vec![],
            intercept: 0.0,
        };
        synthesize(&cfg, 4).unwrap().dataset
    }

    #[test]
    fn bootstrap_on_separable_data() {
        let d = separable(300);
        let spec = ModelSpec::from_dataset(&d).unwrap();
        let forest = Learner::Forest(ForestConfig { n_trees: 30, ..ForestConfig::default() });
        for learner in [Learner::Logit, forest] {
            let e = bootstrap_evaluate(&d, &spec, &learner, 20, 7).unwrap();
            assert_eq!(e.auc.len(), 20);
            assert!(e.mean(Measure::Auc) > 0.95, "{learner}: {}", e.mean(Measure::Auc));
            for m in Measure::ALL {
                assert!(e.values(m).iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            assert_eq!(e, bootstrap_evaluate(&d, &spec, &learner, 20, 7).unwrap());
        }
    }

    #[test]
    fn oob_fraction_near_theory() {
        let x: Vec<f64> = (0..1000).map(|i| f64::from(i % 13)).collect();
        let label = (0..1000).map(|i| u8::from(i % 4 == 0)).collect();
        let d = Dataset::new("d", vec![MetricColumn::new("x", x)], label).unwrap();
        let fractions: Vec<f64> = (0..100).map(|i| resample(d.label(), 3, i).unwrap().oob.len() as f64 / 1000.0).collect();
        assert!((mean(&fractions) - 0.368).abs() < 0.015);
    }

    #[test]
    fn tiny_imbalanced_dataset_errors() {
        let label = vec![1, 0, 0, 0];
        assert!(matches!(resample(&label, 1, 0), Err(Error::DegenerateBootstrap(_))));
    }

    #[test]
    fn compare_identical_and_degenerate() {
        let d = separable(200);
        let spec = ModelSpec::from_dataset(&d).unwrap();
        let e = bootstrap_evaluate(&d, &spec, &Learner::Logit, 10, 1).unwrap();
        let r = compare(&e, &e).unwrap();
        for c in &r.measures {
            assert!(c.differences_pp.iter().all(|&v| v == 0.0));
            assert_eq!(c.effect.delta, 0.0);
            assert_eq!(c.effect.magnitude, Magnitude::Negligible);
            if !c.degenerate_ratio {
                assert_eq!(c.stability_ratio, Some(1.0));
            }
        }
        let mut flat = e.clone();
        flat.auc = vec![0.9; 10];
        let r = compare(&e, &flat).unwrap();
        assert!(r.get(Measure::Auc).degenerate_ratio);
        let mut short = e.clone();
        short.n_boot = 5;
        assert!(compare(&e, &short).is_err());
    }
}
