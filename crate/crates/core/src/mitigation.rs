//! Correlated-metric removal: variable clustering on Spearman |rho| followed
//! by iterative VIF elimination.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rank_stats::{self, CorrelationMatrix};

pub const DEFAULT_RHO_THRESHOLD: f64 = 0.7;
pub const DEFAULT_VIF_THRESHOLD: f64 = 5.0;

/// One agglomeration step. Node ids below `leaves.len()` are leaves; merge
/// `i` creates node `leaves.len() + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Complete-linkage distance `1 - min |rho|` across the two groups.
    pub height: f64,
    /// The `min |rho|` itself; the cut compares this against the threshold.
    pub similarity: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub cut_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarClus {
    pub tree: ClusterTree,
    /// Groups at the cut, members in matrix order, groups ordered by first member.
    pub clusters: Vec<Vec<String>>,
}

/// Complete-linkage clustering on `1 - |rho|`, cut where `|rho| > threshold`
/// would no longer hold for every within-group pair.
pub fn varclus(corr: &CorrelationMatrix, threshold: f64) -> Result<VarClus> {
    let p = corr.len();
    if p < 2 {
        return Err(Error::TooShort { needed: 2, got: p });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("rho threshold must be in (0,1), got {threshold}")));
    }
    let names = &corr.metric_names;

    struct Node {
        id: usize,
        members: Vec<usize>,
        // lexicographically smallest member name, for tie-breaking
        key: String,
    }
    let mut active: Vec<Node> = (0..p)
        .map(|i| Node {
            id: i,
            members: vec![i],
            key: names[i].clone(),
        })
        .collect();
    let mut sim: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| corr.rho[i][j].abs()).collect())
        .collect();
    let mut merges = Vec::with_capacity(p - 1);

    while active.len() > 1 {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                let better = match best {
                    None => true,
                    Some((ba, bb)) => {
                        let (s, bs) = (sim[a][b], sim[ba][bb]);
                        s > bs || (s == bs && pair_key(&active[a].key, &active[b].key) < pair_key(&active[ba].key, &active[bb].key))
                    }
                };
                if better {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("at least two active nodes");
        let s = sim[a][b];
        let node_b = active.remove(b);
        let row_b = sim.remove(b);
        for row in sim.iter_mut() {
            row.remove(b);
        }
        for c in 0..active.len() {
            if c != a {
                let col_b = if c < b { row_b[c] } else { row_b[c + 1] };
                let v = sim[a][c].min(col_b);
                sim[a][c] = v;
                sim[c][a] = v;
            }
        }
        let node_a = &mut active[a];
        let (lo, hi) = if node_a.id < node_b.id {
            (node_a.id, node_b.id)
        } else {
            (node_b.id, node_a.id)
        };
        node_a.members.extend(node_b.members);
        node_a.members.sort_unstable();
        if node_b.key < node_a.key {
            node_a.key = node_b.key;
        }
        node_a.id = p + merges.len();
        merges.push(Merge {
            left: lo,
            right: hi,
            height: 1.0 - s,
            similarity: s,
            size: node_a.members.len(),
        });
    }

    // Replay merges above the threshold with a union-find over leaves.
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    let mut node_leaf: Vec<usize> = (0..p).collect();
    for m in &merges {
        let (la, lb) = (node_leaf[m.left], node_leaf[m.right]);
        node_leaf.push(la);
        if m.similarity > threshold {
            let (ra, rb) = (find(&mut parent, la), find(&mut parent, lb));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..p {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|g| g[0]);

    Ok(VarClus {
        tree: ClusterTree {
            leaves: names.clone(),
            merges,
            cut_threshold: threshold,
        },
        clusters: clusters
            .into_iter()
            .map(|g| g.into_iter().map(|i| names[i].clone()).collect())
            .collect(),
    })
}

fn pair_key<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub cluster: Vec<String>,
    pub representative: String,
    pub removed: Vec<String>,
}

/// Keeps one member per multi-member cluster: the earliest in `priority`,
/// falling back to the earliest in `column_order`.
pub fn select_representatives(
    clusters: &[Vec<String>],
    priority: Option<&[String]>,
    column_order: &[String],
) -> Result<Vec<Representative>> {
    if let Some(pr) = priority {
        let unknown: Vec<String> = pr.iter().filter(|n| !column_order.contains(n)).cloned().collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownMetrics(unknown));
        }
    }
    let col_pos = |n: &str| column_order.iter().position(|c| c == n).unwrap_or(usize::MAX);
    let pri_pos = |n: &str| {
        priority
            .and_then(|pr| pr.iter().position(|c| c == n))
            .unwrap_or(usize::MAX)
    };
    Ok(clusters
        .iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let rep = c
                .iter()
                .min_by_key(|n| (pri_pos(n), col_pos(n)))
                .expect("non-empty cluster")
                .clone();
            let mut removed: Vec<String> = c.iter().filter(|n| **n != rep).cloned().collect();
            removed.sort_by_key(|n| col_pos(n));
            Representative {
                cluster: c.clone(),
                representative: rep,
                removed,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifStep {
    pub metric: String,
    /// `+inf` (serialized as null) when the metric is an exact linear function of the others.
    pub vif: f64,
    pub perfect_collinearity: bool,
}

/// VIF of every metric against all the others, in column order.
pub fn vif_scores(d: &Dataset) -> Result<Vec<(String, f64)>> {
    let p = d.n_metrics();
    if p < 2 {
        return Err(Error::TooShort { needed: 2, got: p });
    }
    let cols: Vec<&[f64]> = d.metrics().iter().map(|c| c.values.as_slice()).collect();
    (0..p)
        .into_par_iter()
        .map(|j| {
            let others: Vec<&[f64]> = (0..p).filter(|&k| k != j).map(|k| cols[k]).collect();
            let fit = rank_stats::ols_r_squared(cols[j], &others)?;
            let vif = if fit.perfect_fit || fit.r_squared >= 1.0 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - fit.r_squared)
            };
            Ok((d.metrics()[j].name.clone(), vif))
        })
        .collect()
}

/// Removes the highest-VIF metric until every VIF is at most `threshold`.
/// On ties the later column goes first, so earlier columns are kept.
pub fn vif_filter(d: &Dataset, threshold: f64) -> Result<(Dataset, Vec<VifStep>)> {
    if d.n_metrics() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: d.n_metrics(),
        });
    }
    let mut current = d.clone();
    let mut trace = Vec::new();
    while current.n_metrics() >= 2 {
        let scores = vif_scores(&current)?;
        let (idx, vif) = scores
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, (_, v))| if *v >= bv { (i, *v) } else { (bi, bv) });
        if vif <= threshold {
            break;
        }
        let name = scores[idx].0.clone();
        trace.push(VifStep {
            metric: name.clone(),
            vif,
            perfect_collinearity: vif.is_infinite(),
        });
        let keep: Vec<String> = current.metric_names().into_iter().filter(|n| *n != name).collect();
        current = current.select(&keep)?;
    }
    Ok((current, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationConfig {
    pub rho_threshold: f64,
    pub vif_threshold: f64,
    pub priority: Option<Vec<String>>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            rho_threshold: DEFAULT_RHO_THRESHOLD,
            vif_threshold: DEFAULT_VIF_THRESHOLD,
            priority: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarClusRound {
    pub clusters: Vec<Vec<String>>,
    pub representatives: Vec<Representative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    /// Clusters of the first clustering pass over all metrics.
    pub clusters: Vec<Vec<String>>,
    pub representatives: Vec<Representative>,
    /// Every clustering pass; later passes only run when survivors still correlate.
    pub rounds: Vec<VarClusRound>,
    pub removed_by_varclus: Vec<String>,
    pub vif_trace: Vec<VifStep>,
    pub surviving: Vec<String>,
    pub warning: Option<String>,
}

/// VarClus removal, repeated until no pair of survivors exceeds the
/// threshold, then VIF removal. Survivors keep their original column order.
pub fn mitigate(d: &Dataset, config: &MitigationConfig) -> Result<(Dataset, MitigationReport)> {
    let original = d.metric_names();
    if let Some(pr) = &config.priority {
        let unknown: Vec<String> = pr.iter().filter(|n| !original.contains(n)).cloned().collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownMetrics(unknown));
        }
    }
    let mut report = MitigationReport {
        clusters: original.iter().map(|n| vec![n.clone()]).collect(),
        representatives: Vec::new(),
        rounds: Vec::new(),
        removed_by_varclus: Vec::new(),
        vif_trace: Vec::new(),
        surviving: original.clone(),
        warning: None,
    };
    if d.n_metrics() < 2 {
        report.warning = Some(format!("only {} metric(s); nothing to mitigate", d.n_metrics()));
        return Ok((d.clone(), report));
    }

    let full_corr = rank_stats::spearman_matrix(d)?;
    let mut survivors = original.clone();
    loop {
        if survivors.len() < 2 {
            break;
        }
        let corr = full_corr.restrict(&survivors)?;
        let vc = varclus(&corr, config.rho_threshold)?;
        let reps = select_representatives(&vc.clusters, config.priority.as_deref(), &original)?;
        if report.rounds.is_empty() {
            report.clusters = vc.clusters.clone();
        }
        if reps.is_empty() {
            break;
        }
        for r in &reps {
            report.removed_by_varclus.extend(r.removed.iter().cloned());
        }
        survivors.retain(|n| !reps.iter().any(|r| r.removed.contains(n)));
        report.representatives.extend(reps.iter().cloned());
        report.rounds.push(VarClusRound {
            clusters: vc.clusters,
            representatives: reps,
        });
    }
    let mut out = d.select(&survivors)?;
    if out.n_metrics() >= 2 {
        let (filtered, trace) = vif_filter(&out, config.vif_threshold)?;
        out = filtered;
        report.vif_trace = trace;
    }
    if out.n_metrics() < 2 {
        report.warning = Some(format!("only {} metric(s) survive mitigation", out.n_metrics()));
    }
    report.surviving = out.metric_names();
    Ok((out, report))
}
