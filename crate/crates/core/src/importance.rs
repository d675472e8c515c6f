//! The nine interpretation techniques and the table type they all produce.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technique {
    #[serde(rename = "type1")]
    Type1,
    #[serde(rename = "type2-wald")]
    Type2Wald,
    #[serde(rename = "type2-lr")]
    Type2Lr,
    #[serde(rename = "type2-f")]
    Type2F,
    #[serde(rename = "type2-chisq")]
    Type2Chisq,
    #[serde(rename = "gini")]
    Gini,
    #[serde(rename = "gini-scaled")]
    GiniScaled,
    #[serde(rename = "perm")]
    Perm,
    #[serde(rename = "perm-scaled")]
    PermScaled,
}

impl Technique {
    pub const ALL: [Technique; 9] = [
        Technique::Type1,
        Technique::Type2Wald,
        Technique::Type2Lr,
        Technique::Type2F,
        Technique::Type2Chisq,
        Technique::Gini,
        Technique::GiniScaled,
        Technique::Perm,
        Technique::PermScaled,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Technique::Type1 => "type1",
            Technique::Type2Wald => "type2-wald",
            Technique::Type2Lr => "type2-lr",
            Technique::Type2F => "type2-f",
            Technique::Type2Chisq => "type2-chisq",
            Technique::Gini => "gini",
            Technique::GiniScaled => "gini-scaled",
            Technique::Perm => "perm",
            Technique::PermScaled => "perm-scaled",
        }
    }

    pub fn is_logit(self) -> bool {
        matches!(
            self,
            Technique::Type1 | Technique::Type2Wald | Technique::Type2Lr | Technique::Type2F | Technique::Type2Chisq
        )
    }

    pub fn valid_ids() -> String {
        Self::ALL.iter().map(|t| t.id()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown technique `{s}`; valid: {}", Self::valid_ids())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub metric: String,
    pub score: f64,
    /// Across-tree standard deviation (forest techniques only).
    pub sd: Option<f64>,
    pub share: f64,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
    /// Score could not be computed normally (aliased coefficient, zero sd, ...).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub technique: Technique,
    pub rows: Vec<ImportanceRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ImportanceTable {
    pub fn score(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.score)
    }

    pub fn share(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.share)
    }

    pub fn metrics(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.metric.clone()).collect()
    }
}

/// Shares of the positive part of each score; negative scores get zero share.
pub(crate) fn shares(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().map(|s| s.max(0.0)).sum();
    if total > 0.0 {
        scores.iter().map(|s| s.max(0.0) / total).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for t in Technique::ALL {
            assert_eq!(t.id().parse::<Technique>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.id()));
        }
        let err = "type3".parse::<Technique>().unwrap_err().to_string();
        assert!(err.contains("type2-chisq") && err.contains("perm-scaled"));
    }

    #[test]
    fn shares_sum_to_one() {
        let s = shares(&[3.0, 1.0, -0.5, 0.0]);
        assert_eq!(s, vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(shares(&[0.0, -1.0]), vec![0.0, 0.0]);
    }
}
