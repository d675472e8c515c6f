//! Report envelope plus tidy CSV and minimal SVG views of reports.
//!
//! JSON reports are the source of truth; everything here is derived from them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{BootstrapEvaluation, Measure};
use crate::experiments::{ConsistencyMatrix, DilutionReport, Rq3Report, Rq4Report};
use crate::importance::{ImportanceTable, Technique};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub manifest: RunManifest,
    pub body: serde_json::Value,
}

impl Report {
    pub fn body_as<T: serde::de::DeserializeOwned>(&self, expected: &str) -> Result<T> {
        if self.kind != expected {
            return Err(Error::ReportKind {
                expected: expected.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(serde_json::from_value(self.body.clone())?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn importance_csv(t: &ImportanceTable) -> String {
    let mut s = String::from("technique,metric,score,sd,share,df,p_value,degenerate\n");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            t.technique,
            r.metric,
            r.score,
            opt(r.sd),
            r.share,
            r.df.map(|d| d.to_string()).unwrap_or_default(),
            opt(r.p_value),
            r.degenerate
        );
    }
    s
}

pub fn evaluation_csv(e: &BootstrapEvaluation) -> String {
    let mut s = String::from("iteration,auc,f_measure,mcc,oob_fraction\n");
    for i in 0..e.n_boot {
        let _ = writeln!(s, "{},{},{},{},{}", i, e.auc[i], e.f_measure[i], e.mcc[i], e.oob_fraction[i]);
    }
    s
}

pub fn dilution_csv(r: &DilutionReport) -> String {
    let mut s = String::from("k,technique,target_share,relative_difference\n");
    for p in &r.points {
        let _ = writeln!(s, "{},{},{},{}", p.k, p.technique, p.target_share, opt(p.relative_difference));
    }
    s
}

/// Square grid with a header row and a leading technique column.
pub fn consistency_csv(m: &ConsistencyMatrix) -> String {
    let mut s = String::from("technique");
    for t in &m.techniques {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    for (t, row) in m.techniques.iter().zip(&m.cells) {
        s.push_str(t.id());
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Per-iteration differences (percentage points), one column per measure.
pub fn rq4_differences_csv(r: &Rq4Report) -> String {
    let mut s = String::from("learner,iteration,auc,f_measure,mcc\n");
    for l in &r.learners {
        let cols: Vec<&[f64]> = Measure::ALL.iter().map(|m| l.comparison.get(*m).differences_pp.as_slice()).collect();
        for i in 0..cols[0].len() {
            let _ = writeln!(s, "{},{},{},{},{}", l.learner, i, cols[0][i], cols[1][i], cols[2][i]);
        }
    }
    s
}

pub fn rq4_stability_csv(r: &Rq4Report) -> String {
    let mut s = String::from("learner,measure,mean_difference_pp,cliffs_delta,magnitude,stability_ratio\n");
    for l in &r.learners {
        for c in &l.comparison.measures {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{}",
                l.learner,
                c.measure.id(),
                c.mean_difference_pp,
                c.effect.delta,
                c.effect.magnitude,
                opt(c.stability_ratio)
            );
        }
    }
    s
}

const PALETTE: [&str; 9] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666", "#1f78b4"];

fn svg_open(w: f64, h: f64) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n")
}

/// Relative difference against k, one line per technique.
pub fn dilution_svg(r: &DilutionReport) -> String {
    let (w, h, pad) = (560.0, 320.0, 50.0);
    let techniques: Vec<Technique> = {
        let mut t: Vec<Technique> = r.points.iter().map(|p| p.technique).collect();
        t.dedup();
        t
    };
    let max_k = r.pool.len().max(1) as f64;
    let vals: Vec<f64> = r.points.iter().filter_map(|p| p.relative_difference).collect();
    let lo = vals.iter().copied().fold(0.0f64, f64::min).min(-0.05);
    let hi = vals.iter().copied().fold(0.0f64, f64::max).max(0.05);
    let x = |k: f64| pad + k / max_k * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut s = svg_open(w, h);
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"20\">relative difference of `{}` share vs k</text>", r.target);
    let _ = writeln!(s, "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#999\"/>", y(0.0), w - pad);
    for (i, t) in techniques.iter().enumerate() {
        let pts: Vec<String> = r
            .points
            .iter()
            .filter(|p| p.technique == *t)
            .filter_map(|p| p.relative_difference.map(|v| format!("{:.2},{:.2}", x(p.k as f64), y(v))))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{t}</text>", w - pad + 4.0, 40.0 + 14.0 * i as f64);
    }
    for k in 0..=r.pool.len() {
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{k}</text>", x(k as f64), h - pad + 16.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Grey-scale heatmap of a consistency matrix.
pub fn consistency_svg(m: &ConsistencyMatrix, title: &str) -> String {
    let n = m.techniques.len() as f64;
    let (cell, left, top) = (36.0, 90.0, 40.0);
    let mut s = svg_open(left + cell * n + 10.0, top + cell * n + 90.0);
    let _ = writeln!(s, "<text x=\"10\" y=\"20\">{title}</text>");
    for (i, row) in m.cells.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 4.0, top + cell * (i as f64 + 0.6), m.techniques[i]);
        for (j, v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let (cx, cy) = (left + cell * j as f64, top + cell * i as f64);
            let _ = writeln!(s, "<rect x=\"{cx}\" y=\"{cy}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\" stroke=\"#fff\"/>");
            let ink = if *v > 0.5 { "#fff" } else { "#000" };
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{:.0}</text>", cx + cell / 2.0, cy + cell * 0.6, v * 100.0);
        }
    }
    for (j, t) in m.techniques.iter().enumerate() {
        let (tx, ty) = (left + cell * (j as f64 + 0.5), top + cell * n + 6.0);
        let _ = writeln!(s, "<text x=\"{tx}\" y=\"{ty}\" transform=\"rotate(60 {tx} {ty})\">{t}</text>");
    }
    s.push_str("</svg>\n");
    s
}

/// Strip plot of per-iteration differences, one column per learner and measure.
pub fn rq4_svg(r: &Rq4Report) -> String {
    let groups: Vec<(String, &[f64])> = r
        .learners
        .iter()
        .flat_map(|l| Measure::ALL.iter().map(move |m| (format!("{} {}", l.learner, m.id()), l.comparison.get(*m).differences_pp.as_slice())))
        .collect();
    let (col, h, pad) = (80.0, 300.0, 40.0);
    let w = pad * 2.0 + col * groups.len() as f64;
    let bound = groups
        .iter()
        .flat_map(|(_, v)| v.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let y = |v: f64| h / 2.0 - v / bound * (h / 2.0 - pad);
    let mut s = svg_open(w, h + 20.0);
    let _ = writeln!(s, "<text x=\"10\" y=\"16\">performance difference (% pts)</text>");
    let _ = writeln!(s, "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#999\"/>", y(0.0), w - pad);
    for (g, (label, vals)) in groups.iter().enumerate() {
        let cx = pad + col * (g as f64 + 0.5);
        for (i, v) in vals.iter().enumerate() {
            let jitter = ((i * 37) % 21) as f64 - 10.0;
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>", cx + jitter, y(*v), PALETTE[g % 3]);
        }
        let _ = writeln!(s, "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{label}</text>", h + 10.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the CSV and SVG views of a dilution, rq3 or rq4 report into `dir`.
pub fn export_plot_data(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<(String, String)> = Vec::new();
    match report.kind.as_str() {
        "dilution" => {
            let r: DilutionReport = report.body_as("dilution")?;
            files.push(("dilution.csv".into(), dilution_csv(&r)));
            files.push(("dilution.svg".into(), dilution_svg(&r)));
        }
        "rq3" => {
            let r: Rq3Report = report.body_as("rq3")?;
            for e in &r.entries {
                for (arm, m) in [("non_mitigated", &e.non_mitigated), ("mitigated", &e.mitigated)] {
                    let stem = format!("rq3_top{}_{arm}", e.k);
                    files.push((format!("{stem}.csv"), consistency_csv(m)));
                    files.push((format!("{stem}.svg"), consistency_svg(m, &format!("top-{} consistency, {arm}", e.k))));
                }
            }
        }
        "rq4" => {
            let r: Rq4Report = report.body_as("rq4")?;
            files.push(("rq4_differences.csv".into(), rq4_differences_csv(&r)));
            files.push(("rq4_stability.csv".into(), rq4_stability_csv(&r)));
            files.push(("rq4_differences.svg".into(), rq4_svg(&r)));
        }
        other => {
            return Err(Error::ReportKind {
                expected: "dilution, rq3 or rq4".into(),
                found: other.to_string(),
            })
        }
    }
    files
        .into_iter()
        .map(|(name, content)| {
            let path = dir.join(name);
            write_atomic(&path, content.as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::DilutionPoint;

    fn manifest() -> RunManifest {
        RunManifest {
            tool_version: "0".into(),
            command: vec![],
            config: serde_json::Value::Null,
            seed: Some(1),
            inputs: vec![],
            started_unix: 0,
            finished_unix: 0,
        }
    }

    fn dilution() -> DilutionReport {
        let points = (0..3)
            .map(|k| DilutionPoint {
                k,
                technique: Technique::Type1,
                spec: vec![],
                target_share: 0.9 / (k + 1) as f64,
                relative_difference: Some(1.0 / (k + 1) as f64 - 1.0),
            })
            .collect();
        DilutionReport {
            target: "t".into(),
            pool: vec!["a".into(), "b".into()],
            pool_rho: vec![0.9, 0.8],
            base_spec: vec!["t".into()],
            points,
        }
    }

    #[test]
    fn dilution_exports() {
        let csv = dilution_csv(&dilution());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,technique,target_share,relative_difference");
        assert!(lines.next().unwrap().starts_with("0,type1,0.9,0"));
        let svg = dilution_svg(&dilution());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

        let dir = tempfile::tempdir().unwrap();
        let report = Report {
            schema_version: SCHEMA_VERSION,
            kind: "dilution".into(),
            manifest: manifest(),
            body: serde_json::to_value(dilution()).unwrap(),
        };
        let files = export_plot_data(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.exists()));
    }

    #[test]
    fn consistency_grid_is_square() {
        let m = ConsistencyMatrix {
            techniques: vec![Technique::Type1, Technique::Gini],
            cells: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let csv = consistency_csv(&m);
        assert_eq!(csv, "technique,type1,gini\ntype1,1,0\ngini,0,1\n");
        assert!(consistency_svg(&m, "x").contains("<rect"));
    }

    #[test]
    fn kind_mismatch() {
        let report = Report {
            schema_version: SCHEMA_VERSION,
            kind: "inspect".into(),
            manifest: manifest(),
            body: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(export_plot_data(&report, dir.path()), Err(Error::ReportKind { .. })));
        assert!(matches!(report.body_as::<DilutionReport>("dilution"), Err(Error::ReportKind { .. })));
    }
}
