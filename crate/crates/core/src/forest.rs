//! Random forest of unpruned CART classification trees.
//!
//! Metrics are handled in canonical (lexicographically sorted) order: candidate
//! sampling and split tie-breaking both use that order, so a forest depends on
//! the dataset content and seed but not on the order the metrics were listed in.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::ModelSpec;
use crate::importance::{self, ImportanceRow, ImportanceTable, Technique};
use crate::seeding::rng_for;

const TAG_TREE: u64 = 0x5452_4545;
const TAG_PERMUTE: u64 = 0x5045_524D;
/// A split must lower the weighted impurity by more than this.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidates per node; `None` means floor(sqrt(p)).
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_node_size: 1,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn resolved_mtry(&self, p: usize) -> Result<usize> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidConfig("min_node_size must be at least 1".into()));
        }
        let mtry = self.mtry.unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1));
        if mtry == 0 || mtry > p {
            return Err(Error::InvalidConfig(format!("mtry must be in 1..={p}, got {mtry}")));
        }
        Ok(mtry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        /// Canonical metric index.
        metric: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; 2],
        class: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub node: usize,
    pub metric: usize,
    pub value: f64,
    pub n_parent: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub gini_parent: f64,
    pub gini_left: f64,
    pub gini_right: f64,
}

impl SplitRecord {
    /// G_parent minus the size-weighted child impurities.
    pub fn decrease(&self) -> f64 {
        let np = self.n_parent as f64;
        self.gini_parent - self.n_left as f64 / np * self.gini_left - self.n_right as f64 / np * self.gini_right
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub splits: Vec<SplitRecord>,
}

impl Tree {
    /// Leaf class for a row given as a canonical-index accessor.
    pub fn predict(&self, value: impl Fn(usize) -> f64) -> u8 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class, .. } => return *class,
                Node::Split { metric, value: v, left, right } => {
                    at = if value(*metric) <= *v { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn uses_metric(&self, metric: usize) -> bool {
        self.splits.iter().any(|s| s.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub mtry: usize,
    /// Sorted metric names; every metric index in the trees refers to this.
    pub metric_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Bootstrap draw per tree (sorted, with repeats).
    pub inbag: Vec<Vec<usize>>,
    /// Rows never drawn for each tree.
    pub oob: Vec<Vec<usize>>,
    pub n_rows: usize,
}

impl ForestModel {
    pub fn oob_fraction(&self) -> f64 {
        let total: usize = self.oob.iter().map(Vec::len).sum();
        total as f64 / (self.oob.len() * self.n_rows) as f64
    }
}

fn gini(c: [usize; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn class_counts(idx: &[usize], y: &[u8]) -> [usize; 2] {
    let ones = idx.iter().filter(|&&i| y[i] == 1).count();
    [idx.len() - ones, ones]
}

struct Best {
    metric: usize,
    value: f64,
    decrease: f64,
    left: [usize; 2],
}

fn best_split(cols: &[&[f64]], y: &[u8], idx: &[usize], counts: [usize; 2], candidates: &[usize], buf: &mut Vec<(f64, u8)>) -> Option<Best> {
    let m = idx.len();
    let mf = m as f64;
    let gp = gini(counts);
    let mut best: Option<Best> = None;
    let mut best_dec = MIN_DECREASE;
    for &j in candidates {
        let col = cols[j];
        buf.clear();
        buf.extend(idx.iter().map(|&i| (col[i], y[i])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0usize; 2];
        for k in 0..m - 1 {
            left[buf[k].1 as usize] += 1;
            if buf[k].0 == buf[k + 1].0 {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1]];
            let nl = (k + 1) as f64;
            let dec = gp - nl / mf * gini(left) - (mf - nl) / mf * gini(right);
            if dec > best_dec {
                best_dec = dec;
                let (a, b) = (buf[k].0, buf[k + 1].0);
                let mid = a + (b - a) / 2.0;
                best = Some(Best {
                    metric: j,
                    value: if mid < b { mid } else { a },
                    decrease: dec,
                    left,
                });
            }
        }
    }
    best
}

fn grow_tree(cols: &[&[f64]], y: &[u8], inbag: &[usize], mtry: usize, min_node_size: usize, rng: &mut ChaCha8Rng) -> Tree {
    let p = cols.len();
    let leaf_placeholder = Node::Leaf { counts: [0, 0], class: 0 };
    let mut nodes = vec![leaf_placeholder.clone()];
    let mut splits = Vec::new();
    let mut stack = vec![(0usize, inbag.to_vec())];
    let mut order: Vec<usize> = (0..p).collect();
    let mut buf = Vec::with_capacity(inbag.len());

    while let Some((id, idx)) = stack.pop() {
        let counts = class_counts(&idx, y);
        let splittable = counts[0] > 0 && counts[1] > 0 && idx.len() > min_node_size;
        let best = if splittable {
            // Partial Fisher-Yates over the canonical order.
            order.iter_mut().enumerate().for_each(|(i, v)| *v = i);
            for i in 0..mtry {
                let k = rng.random_range(i..p);
                order.swap(i, k);
            }
            let mut candidates = order[..mtry].to_vec();
            candidates.sort_unstable();
            best_split(cols, y, &idx, counts, &candidates, &mut buf)
        } else {
            None
        };
        match best {
            None => {
                let class = match counts[1].cmp(&counts[0]) {
                    std::cmp::Ordering::Greater => 1,
                    std::cmp::Ordering::Less => 0,
                    std::cmp::Ordering::Equal => u8::from(rng.random_bool(0.5)),
                };
                nodes[id] = Node::Leaf { counts, class };
            }
            Some(b) => {
                let col = cols[b.metric];
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= b.value);
                let right = [counts[0] - b.left[0], counts[1] - b.left[1]];
                debug_assert!(b.decrease >= 0.0);
                let (lid, rid) = (nodes.len(), nodes.len() + 1);
                nodes.push(leaf_placeholder.clone());
                nodes.push(leaf_placeholder.clone());
                nodes[id] = Node::Split {
                    metric: b.metric,
                    value: b.value,
                    left: lid,
                    right: rid,
                };
                splits.push(SplitRecord {
                    node: id,
                    metric: b.metric,
                    value: b.value,
                    n_parent: idx.len(),
                    n_left: l.len(),
                    n_right: r.len(),
                    gini_parent: gini(counts),
                    gini_left: gini(b.left),
                    gini_right: gini(right),
                });
                stack.push((rid, r));
                stack.push((lid, l));
            }
        }
    }
    Tree { nodes, splits }
}

fn canonical_names(spec: &ModelSpec) -> Vec<String> {
    let mut names = spec.metrics().to_vec();
    names.sort();
    names
}

pub fn fit_forest(d: &Dataset, spec: &ModelSpec, cfg: &ForestConfig) -> Result<ForestModel> {
    let names = canonical_names(spec);
    let cols = d.columns(&names)?;
    let mtry = cfg.resolved_mtry(names.len())?;
    let n = d.n_rows();
    let y = d.label();

    let grown: Vec<(Tree, Vec<usize>, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(cfg.seed, &[TAG_TREE, t as u64]);
            let mut inbag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let tree = grow_tree(&cols, y, &inbag, mtry, cfg.min_node_size, &mut rng);
            inbag.sort_unstable();
            let mut seen = vec![false; n];
            inbag.iter().for_each(|&i| seen[i] = true);
            let oob = (0..n).filter(|&i| !seen[i]).collect();
            (tree, inbag, oob)
        })
        .collect();

    let mut trees = Vec::with_capacity(grown.len());
    let mut inbag = Vec::with_capacity(grown.len());
    let mut oob = Vec::with_capacity(grown.len());
    for (t, i, o) in grown {
        trees.push(t);
        inbag.push(i);
        oob.push(o);
    }
    Ok(ForestModel {
        config: cfg.clone(),
        mtry,
        metric_names: names,
        trees,
        inbag,
        oob,
        n_rows: n,
    })
}

/// Fraction of trees voting defective, per row of `d`.
pub fn predict_prob_forest(f: &ForestModel, d: &Dataset) -> Result<Vec<f64>> {
    let cols = d.columns(&f.metric_names)?;
    let t = f.trees.len() as f64;
    Ok((0..d.n_rows())
        .into_par_iter()
        .map(|i| {
            let votes: usize = f.trees.iter().map(|tree| usize::from(tree.predict(|j| cols[j][i]))).sum();
            votes as f64 / t
        })
        .collect())
}

fn sample_sd(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    Some((x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Per-tree values of one importance measure, summarised into a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTreeImportance {
    pub metric_names: Vec<String>,
    /// `values[t][j]`: contribution of tree `t` for canonical metric `j`.
    pub values: Vec<Vec<f64>>,
}

impl PerTreeImportance {
    pub fn raw(&self, j: usize) -> f64 {
        self.values.iter().map(|v| v[j]).sum::<f64>() / self.values.len() as f64
    }

    pub fn sd(&self, j: usize) -> Option<f64> {
        sample_sd(&self.values.iter().map(|v| v[j]).collect::<Vec<_>>())
    }
}

/// Summed size-weighted Gini decrease per tree and metric.
pub fn gini_per_tree(f: &ForestModel) -> PerTreeImportance {
    let p = f.metric_names.len();
    let values = f
        .trees
        .iter()
        .zip(&f.inbag)
        .map(|(tree, inbag)| {
            let n_inbag = inbag.len() as f64;
            let mut v = vec![0.0; p];
            for s in &tree.splits {
                v[s.metric] += s.n_parent as f64 / n_inbag * s.decrease();
            }
            v
        })
        .collect();
    PerTreeImportance {
        metric_names: f.metric_names.clone(),
        values,
    }
}

/// OOB accuracy decrease per tree and metric after permuting that metric
/// among the tree's OOB rows.
pub fn permutation_per_tree(f: &ForestModel, d: &Dataset, seed: u64) -> Result<PerTreeImportance> {
    if d.n_rows() != f.n_rows {
        return Err(Error::LengthMismatch {
            left: d.n_rows(),
            right: f.n_rows,
        });
    }
    let cols = d.columns(&f.metric_names)?;
    let y = d.label();
    let p = cols.len();
    let values = f
        .trees
        .par_iter()
        .zip(&f.oob)
        .enumerate()
        .map(|(t, (tree, oob))| {
            let mut v = vec![0.0; p];
            if oob.is_empty() {
                return v;
            }
            let n_oob = oob.len() as f64;
            let correct = oob.iter().filter(|&&i| tree.predict(|j| cols[j][i]) == y[i]).count();
            let base = correct as f64 / n_oob;
            for (j, slot) in v.iter_mut().enumerate() {
                if !tree.uses_metric(j) {
                    continue;
                }
                let mut rng = rng_for(seed, &[TAG_PERMUTE, t as u64, j as u64]);
                let mut perm: Vec<usize> = oob.clone();
                perm.shuffle(&mut rng);
                let correct = oob
                    .iter()
                    .zip(&perm)
                    .filter(|(&i, &src)| tree.predict(|m| if m == j { cols[j][src] } else { cols[m][i] }) == y[i])
                    .count();
                *slot = base - correct as f64 / n_oob;
            }
            v
        })
        .collect();
    Ok(PerTreeImportance {
        metric_names: f.metric_names.clone(),
        values,
    })
}

fn table(technique: Technique, per_tree: &PerTreeImportance, scaled: bool, zero_sd_keeps_raw: bool) -> ImportanceTable {
    let t = per_tree.values.len() as f64;
    let mut notes = Vec::new();
    let mut rows: Vec<ImportanceRow> = (0..per_tree.metric_names.len())
        .map(|j| {
            let raw = per_tree.raw(j);
            let sd = per_tree.sd(j);
            let (score, degenerate) = if !scaled {
                (raw, false)
            } else {
                match sd {
                    Some(s) if s > 0.0 => (raw / (s / t.sqrt()), false),
                    _ if raw == 0.0 && zero_sd_keeps_raw => (0.0, false),
                    _ if zero_sd_keeps_raw => (raw, true),
                    _ => (0.0, true),
                }
            };
            ImportanceRow {
                metric: per_tree.metric_names[j].clone(),
                score,
                sd,
                share: 0.0,
                df: None,
                p_value: None,
                degenerate,
            }
        })
        .collect();
    let shares = importance::shares(&rows.iter().map(|r| r.score).collect::<Vec<_>>());
    for (r, s) in rows.iter_mut().zip(shares) {
        r.share = s;
    }
    let degenerate: Vec<&str> = rows.iter().filter(|r| r.degenerate).map(|r| r.metric.as_str()).collect();
    if !degenerate.is_empty() {
        notes.push(format!("zero per-tree sd for: {}", degenerate.join(", ")));
    }
    if technique == Technique::GiniScaled {
        notes.push("scaled Gini = mean decrease / standard error of per-tree sums (not a reference-package output)".into());
    }
    ImportanceTable { technique, rows, notes }
}

pub fn gini_importance(f: &ForestModel, scaled: bool) -> ImportanceTable {
    let technique = if scaled { Technique::GiniScaled } else { Technique::Gini };
    table(technique, &gini_per_tree(f), scaled, false)
}

pub fn permutation_importance(f: &ForestModel, d: &Dataset, scaled: bool, seed: u64) -> Result<ImportanceTable> {
    let technique = if scaled { Technique::PermScaled } else { Technique::Perm };
    Ok(table(technique, &permutation_per_tree(f, d, seed)?, scaled, true))
}

/// All four forest tables from one pass over the trees.
pub fn forest_importances(f: &ForestModel, d: &Dataset, seed: u64) -> Result<Vec<ImportanceTable>> {
    let g = gini_per_tree(f);
    let p = permutation_per_tree(f, d, seed)?;
    Ok(vec![
        table(Technique::Gini, &g, false, false),
        table(Technique::GiniScaled, &g, true, false),
        table(Technique::Perm, &p, false, true),
        table(Technique::PermScaled, &p, true, true),
    ])
}
