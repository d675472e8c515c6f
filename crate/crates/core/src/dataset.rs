//! Tabular defect datasets: loading, validation, summaries and a seeded
//! latent-factor generator for desk-scale experiments.
//!
//! Column order is part of a dataset's identity. Every operation here keeps
//! metrics in the order they were loaded or constructed, because the order of
//! metrics in a model specification is itself an experimental variable.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank_stats;
use crate::seeding;

/// Label cell values mapped to "defective" when the caller does not say otherwise.
pub const DEFAULT_POSITIVE_LABELS: [&str; 5] = ["1", "true", "TRUE", "yes", "buggy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl MetricColumn {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Ordered metric columns plus a binary defect label (1 = defective).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    metrics: Vec<MetricColumn>,
    label: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_modules: usize,
    pub n_metrics: usize,
    pub n_defective: usize,
    pub defect_ratio: f64,
    /// Events per variable: defective modules per metric.
    pub epv: f64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, metrics: Vec<MetricColumn>, label: Vec<u8>) -> Result<Self> {
        let n_rows = label.len();
        let mut seen = HashSet::new();
        for (i, col) in metrics.iter().enumerate() {
            if col.name.trim().is_empty() {
                return Err(Error::EmptyMetricName(i));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::DuplicateMetric(col.name.clone()));
            }
            if col.values.len() != n_rows {
                return Err(Error::RaggedColumn {
                    name: col.name.clone(),
                    expected: n_rows,
                    found: col.values.len(),
                });
            }
            if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    column: col.name.clone(),
                    row,
                });
            }
        }
        if label.iter().any(|&y| y > 1) {
            return Err(Error::InvalidConfig("label values must be 0 or 1".into()));
        }
        let n_def = label.iter().filter(|&&y| y == 1).count();
        if n_def == 0 {
            return Err(Error::SingleClassLabel("clean"));
        }
        if n_def == n_rows {
            return Err(Error::SingleClassLabel("defective"));
        }
        Ok(Self {
            name: name.into(),
            metrics,
            label,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.label.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metrics.len()
    }

    pub fn metrics(&self) -> &[MetricColumn] {
        &self.metrics
    }

    pub fn label(&self) -> &[u8] {
        &self.label
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.metrics
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Columns by name, erroring with every missing name at once.
    pub fn columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&[f64]>> {
        let missing: Vec<String> = names
            .iter()
            .filter(|n| self.column(n.as_ref()).is_none())
            .map(|n| n.as_ref().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownMetrics(missing));
        }
        Ok(names
            .iter()
            .map(|n| self.column(n.as_ref()).expect("checked above"))
            .collect())
    }

    /// New dataset holding only `names`, in the order given.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let cols = self.columns(names)?;
        let metrics = names
            .iter()
            .zip(cols)
            .map(|(n, v)| MetricColumn::new(n.as_ref(), v.to_vec()))
            .collect();
        Dataset::new(self.name.clone(), metrics, self.label.clone())
    }

    /// Appends a column taken from `other` (same row count required).
    pub fn with_column(&self, column: MetricColumn) -> Result<Dataset> {
        let mut metrics = self.metrics.clone();
        metrics.push(column);
        Dataset::new(self.name.clone(), metrics, self.label.clone())
    }

    /// Rows at `indices` (repeats allowed), e.g. a bootstrap sample.
    pub fn take_rows(&self, indices: &[usize]) -> Result<Dataset> {
        let metrics = self
            .metrics
            .iter()
            .map(|c| MetricColumn::new(c.name.clone(), indices.iter().map(|&i| c.values[i]).collect()))
            .collect();
        let label = indices.iter().map(|&i| self.label[i]).collect();
        Dataset::new(self.name.clone(), metrics, label)
    }

    /// Metric values split into (defective, clean) groups.
    pub fn split_by_label(&self, column: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut def = Vec::new();
        let mut clean = Vec::new();
        for (&v, &y) in column.iter().zip(&self.label) {
            if y == 1 {
                def.push(v);
            } else {
                clean.push(v);
            }
        }
        (def, clean)
    }
}

pub fn summarize(d: &Dataset) -> DatasetSummary {
    let n_modules = d.n_rows();
    let n_metrics = d.n_metrics();
    let n_defective = d.label().iter().filter(|&&y| y == 1).count();
    DatasetSummary {
        n_modules,
        n_metrics,
        n_defective,
        defect_ratio: n_defective as f64 / n_modules as f64,
        epv: if n_metrics == 0 {
            f64::INFINITY
        } else {
            n_defective as f64 / n_metrics as f64
        },
    }
}

pub fn load_csv<P: AsRef<Path>>(path: P, label_column: &str, positive_labels: &[&str]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    read_csv(file, &name, label_column, positive_labels)
}

pub fn read_csv<R: Read>(reader: R, name: &str, label_column: &str, positive_labels: &[&str]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let positive: HashSet<&str> = positive_labels.iter().copied().collect();

    let metric_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); metric_idx.len()];
    let mut label = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = record.get(label_idx).unwrap_or("").trim();
        label.push(u8::from(positive.contains(cell)));
        for (slot, &ci) in metric_idx.iter().enumerate() {
            let raw = record.get(ci).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                row: row + 1,
                column: headers[ci].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row: row + 1,
                    column: headers[ci].clone(),
                    value: raw.to_string(),
                });
            }
            values[slot].push(v);
        }
    }
    let metrics = metric_idx
        .iter()
        .zip(values)
        .map(|(&ci, v)| MetricColumn::new(headers[ci].clone(), v))
        .collect();
    Dataset::new(name, metrics, label)
}

/// Writes metrics in column order followed by the label column (`0`/`1`).
/// Values use the shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(d: &Dataset, writer: W, label_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = d.metrics().iter().map(|c| c.name.as_str()).collect();
    header.push(label_column);
    wtr.write_record(&header)?;
    for r in 0..d.n_rows() {
        let mut rec: Vec<String> = d.metrics().iter().map(|c| c.values[r].to_string()).collect();
        rec.push(d.label()[r].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// One group of metrics driven by a shared latent factor.
///
/// Member `j` is `factor + noise[j] * e_j` with independent standard normal
/// `e_j`, so a smaller noise scale gives a tighter within-cluster correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub prefix: String,
    pub noise: Vec<f64>,
    /// Weight of this cluster's factor in the label's logit.
    pub coefficient: f64,
}

impl ClusterConfig {
    pub fn uniform(prefix: impl Into<String>, size: usize, noise: f64, coefficient: f64) -> Self {
        Self {
            prefix: prefix.into(),
            noise: vec![noise; size],
            coefficient,
        }
    }

    pub fn member_names(&self) -> Vec<String> {
        (1..=self.noise.len()).map(|j| format!("{}{}", self.prefix, j)).collect()
    }
}

/// A metric built as a weighted sum of already generated metrics plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationConfig {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub clusters: Vec<ClusterConfig>,
    #[serde(default)]
    pub noise_metrics: usize,
    #[serde(default)]
    pub combinations: Vec<CombinationConfig>,
    #[serde(default)]
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCorrelation {
    pub cluster: String,
    pub min_abs_rho: f64,
    pub max_abs_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub cluster_rho: Vec<ClusterCorrelation>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic latent-factor dataset for the given `(config, seed)`.
///
/// Columns come out cluster by cluster, then `noise1..`, then combinations.
pub fn synthesize(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    if config.n_rows < 10 {
        return Err(Error::InvalidConfig(format!(
            "n_rows must be at least 10, got {}",
            config.n_rows
        )));
    }
    if config.clusters.iter().any(|c| c.noise.is_empty()) {
        return Err(Error::InvalidConfig("empty cluster".into()));
    }
    if config.clusters.is_empty() && config.noise_metrics == 0 {
        return Err(Error::InvalidConfig("no metrics to generate".into()));
    }
    if config
        .clusters
        .iter()
        .flat_map(|c| c.noise.iter())
        .any(|s| !s.is_finite() || *s < 0.0)
    {
        return Err(Error::InvalidConfig("noise scales must be finite and non-negative".into()));
    }

    let n = config.n_rows;
    let mut rng = seeding::rng_for(seed, &[0x5359_4E54]);
    let mut normals = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };

    let mut metrics = Vec::new();
    let mut logit = vec![config.intercept; n];
    let mut cluster_names = Vec::new();
    for cluster in &config.clusters {
        let factor = normals(n);
        for (l, f) in logit.iter_mut().zip(&factor) {
            *l += cluster.coefficient * f;
        }
        let names = cluster.member_names();
        for (name, &scale) in names.iter().zip(&cluster.noise) {
            let e = normals(n);
            let values = factor.iter().zip(&e).map(|(f, e)| f + scale * e).collect();
            metrics.push(MetricColumn::new(name.clone(), values));
        }
        cluster_names.push((cluster.prefix.clone(), names));
    }
    for k in 1..=config.noise_metrics {
        metrics.push(MetricColumn::new(format!("noise{k}"), normals(n)));
    }
    for combo in &config.combinations {
        let mut values = normals(n);
        values.iter_mut().for_each(|v| *v *= combo.noise);
        for (term, weight) in &combo.terms {
            let col = metrics
                .iter()
                .find(|c| &c.name == term)
                .ok_or_else(|| Error::UnknownMetrics(vec![term.clone()]))?;
            for (v, x) in values.iter_mut().zip(&col.values) {
                *v += weight * x;
            }
        }
        metrics.push(MetricColumn::new(combo.name.clone(), values));
    }
    let label: Vec<u8> = logit
        .iter()
        .map(|&l| u8::from(rng.random::<f64>() < sigmoid(l)))
        .collect();

    let names: BTreeSet<&str> = metrics.iter().map(|c| c.name.as_str()).collect();
    if names.len() != metrics.len() {
        return Err(Error::InvalidConfig("generated metric names collide".into()));
    }
    let dataset = Dataset::new(format!("synthetic-{seed}"), metrics, label)?;

    let mut cluster_rho = Vec::new();
    for (prefix, members) in cluster_names {
        let mut lo = 1.0f64;
        let mut hi = 0.0f64;
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let r = rank_stats::spearman(
                    dataset.column(&members[i]).expect("generated"),
                    dataset.column(&members[j]).expect("generated"),
                )?
                .rho
                .abs();
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        if members.len() < 2 {
            lo = 1.0;
            hi = 1.0;
        }
        cluster_rho.push(ClusterCorrelation {
            cluster: prefix,
            min_abs_rho: lo,
            max_abs_rho: hi,
        });
    }
    Ok(SyntheticDataset { dataset, cluster_rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), "t", "bug", &DEFAULT_POSITIVE_LABELS)
    }

    #[test]
    fn loads_three_row_csv() {
        let d = parse("a,b,bug\n1,2,0\n3,4,1\n5,6,0\n").unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.metric_names(), vec!["a", "b"]);
        assert_eq!(d.label(), &[0, 1, 0]);
    }

    #[test]
    fn preserves_column_order() {
        let d = parse("TLOC,MLOC_sum,bug\n1,2,0\n3,4,1\n").unwrap();
        assert_eq!(d.metric_names(), vec!["TLOC", "MLOC_sum"]);
        let d = parse("z,bug,a\n1,0,2\n3,1,4\n").unwrap();
        assert_eq!(d.metric_names(), vec!["z", "a"]);
    }

    #[test]
    fn rejects_single_class() {
        let err = parse("a,bug\n1,0\n2,0\n").unwrap_err();
        assert!(err.to_string().contains("single-class label"), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(parse("a,b\n1,2\n"), Err(Error::MissingLabelColumn(_))));
        match parse("a,b,bug\n1,2,0\n1,x,1\n") {
            Err(Error::NonNumeric { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("a,a,bug\n1,2,0\n1,3,1\n"), Err(Error::DuplicateMetric(_))));
        assert!(matches!(parse("a,b,bug\n1,,0\n1,3,1\n"), Err(Error::NonNumeric { .. })));
    }

    #[test]
    fn custom_positive_labels() {
        let d = read_csv("a,bug\n1,clean\n2,buggy\n3,TRUE\n".as_bytes(), "t", "bug", &["buggy"]).unwrap();
        assert_eq!(d.label(), &[0, 1, 0]);
    }

    #[test]
    fn summary_arithmetic() {
        let metrics = (0..10)
            .map(|j| MetricColumn::new(format!("m{j}"), (0..100).map(|i| (i * j) as f64).collect()))
            .collect();
        let label = (0..100).map(|i| u8::from(i < 20)).collect();
        let s = summarize(&Dataset::new("x", metrics, label).unwrap());
        assert_eq!(s.epv, 2.0);
        assert_eq!(s.defect_ratio, 0.2);
        assert_eq!(s.n_defective, 20);
    }

    #[test]
    fn jdt_sized_summary_rounds_to_table_value() {
        // 997 modules, 15 metrics: any defective count in 210..225 gives EPV 14
        // after truncation.
        let metrics = (0..15)
            .map(|j| MetricColumn::new(format!("m{j}"), vec![j as f64; 997]))
            .collect();
        let label = (0..997).map(|i| u8::from(i < 212)).collect();
        let s = summarize(&Dataset::new("jdt", metrics, label).unwrap());
        assert_eq!(s.epv.floor(), 14.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = SyntheticConfig {
            n_rows: 50,
            clusters: vec![ClusterConfig::uniform("c", 2, 0.5, 1.0)],
            noise_metrics: 1,
            combinations: vec![],
            intercept: 0.0,
        };
        let d = synthesize(&cfg, 3).unwrap().dataset;
        let mut buf = Vec::new();
        write_csv(&d, &mut buf, "bug").unwrap();
        let back = read_csv(buf.as_slice(), d.name(), "bug", &DEFAULT_POSITIVE_LABELS).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cfg = SyntheticConfig {
            n_rows: 200,
            clusters: vec![ClusterConfig::uniform("c", 3, 0.3, 1.5)],
            noise_metrics: 2,
            combinations: vec![],
            intercept: -0.5,
        };
        let a = synthesize(&cfg, 11).unwrap();
        let b = synthesize(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&cfg, 12).unwrap();
        assert_ne!(a.dataset.label(), c.dataset.label());
    }

    #[test]
    fn tight_cluster_has_high_rank_correlation() {
        let cfg = SyntheticConfig {
            n_rows: 1000,
            clusters: vec![ClusterConfig::uniform("c", 5, 0.1, 1.0)],
            noise_metrics: 0,
            combinations: vec![],
            intercept: 0.0,
        };
        let s = synthesize(&cfg, 5).unwrap();
        assert!(s.cluster_rho[0].min_abs_rho >= 0.9, "{:?}", s.cluster_rho);
        // Recompute independently of the reported value.
        let d = &s.dataset;
        for a in 1..=5 {
            for b in (a + 1)..=5 {
                let r = rank_stats::spearman(
                    d.column(&format!("c{a}")).unwrap(),
                    d.column(&format!("c{b}")).unwrap(),
                )
                .unwrap();
                assert!(r.rho.abs() >= 0.9);
            }
        }
    }

    #[test]
    fn independent_clusters_are_uncorrelated() {
        let cfg = SyntheticConfig {
            n_rows: 1000,
            clusters: vec![
                ClusterConfig::uniform("a", 1, 0.1, 1.0),
                ClusterConfig::uniform("b", 1, 0.1, 1.0),
            ],
            noise_metrics: 0,
            combinations: vec![],
            intercept: 0.0,
        };
        let d = synthesize(&cfg, 8).unwrap().dataset;
        let r = rank_stats::spearman(d.column("a1").unwrap(), d.column("b1").unwrap()).unwrap();
        assert!(r.rho.abs() < 0.2, "{}", r.rho);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut cfg = SyntheticConfig {
            n_rows: 5,
            clusters: vec![ClusterConfig::uniform("a", 1, 0.1, 1.0)],
            noise_metrics: 0,
            combinations: vec![],
            intercept: 0.0,
        };
        assert!(matches!(synthesize(&cfg, 1), Err(Error::InvalidConfig(_))));
        cfg.n_rows = 100;
        cfg.clusters.push(ClusterConfig::uniform("b", 0, 0.1, 1.0));
        assert!(matches!(synthesize(&cfg, 1), Err(Error::InvalidConfig(_))));
    }
}
