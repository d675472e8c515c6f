use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use defect_interp::export::Report;
use defect_interp::importance::ImportanceTable;

const BIN: &str = env!("CARGO_BIN_EXE_defect-interp");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("METRIC_INTERP_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic_csv(dir: &Path, seed: u64) -> PathBuf {
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"n_rows": 250,
            "clusters": [
              {"prefix": "size", "noise": [0.2, 0.2, 0.2, 0.2], "coefficient": 1.5},
              {"prefix": "churn", "noise": [0.3, 0.3], "coefficient": 0.8}
            ],
            "noise_metrics": 2}"#,
    )
    .unwrap();
    let csv = dir.join(format!("data{seed}.csv"));
    let o = run(&["synthesize", "--config", cfg.to_str().unwrap(), "--seed", &seed.to_string(), "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    csv
}

fn report(o: &Output) -> Report {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("json report")
}

#[test]
fn inspect_reports_summary_and_input_digest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 1);
    let r = report(&run(&["inspect", "--input", csv.to_str().unwrap()]));
    assert_eq!(r.kind, "inspect");
    assert_eq!(r.body["summary"]["n_modules"], 250);
    assert_eq!(r.body["summary"]["n_metrics"], 8);
    assert_eq!(r.manifest.inputs.len(), 1);
    assert_eq!(r.manifest.inputs[0].sha256.len(), 64);

    let o = run(&["inspect", "--input", csv.to_str().unwrap(), "--format", "csv"]);
    assert!(stdout(&o).starts_with("key,value\nn_modules,250\n"));
}

#[test]
fn type1_depends_on_spec_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 2);
    let table = |spec: &str| -> ImportanceTable {
        let r = report(&run(&["interpret", "--input", csv.to_str().unwrap(), "--technique", "type1", "--spec", spec]));
        r.body_as("interpret").unwrap()
    };
    let ab = table("size1,size2");
    let ba = table("size2,size1");
    assert!(ab.share("size1").unwrap() > ba.share("size1").unwrap() + 0.2);
    assert!(ba.share("size2").unwrap() > ab.share("size2").unwrap() + 0.2);
}

#[test]
fn type2_and_forest_ignore_spec_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 3);
    for technique in ["type2-lr", "gini"] {
        let body = |spec: &str| {
            let r = report(&run(&[
                "interpret", "--input", csv.to_str().unwrap(), "--technique", technique, "--spec", spec, "--seed", "9", "--trees", "20",
            ]));
            r.body
        };
        let a: ImportanceTable = serde_json::from_value(body("size1,size2,churn1")).unwrap();
        let b: ImportanceTable = serde_json::from_value(body("churn1,size2,size1")).unwrap();
        for m in ["size1", "size2", "churn1"] {
            assert!((a.score(m).unwrap() - b.score(m).unwrap()).abs() < 1e-8, "{technique} {m}");
        }
    }
}

#[test]
fn unknown_technique_is_a_usage_error_listing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 4);
    let o = run(&["interpret", "--input", csv.to_str().unwrap(), "--technique", "shap"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for id in ["type1", "type2-wald", "type2-lr", "type2-f", "type2-chisq", "gini", "gini-scaled", "perm", "perm-scaled"] {
        assert!(err.contains(id), "missing {id} in {err}");
    }
}

#[test]
fn mismatched_learner_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 5);
    let o = run(&["interpret", "--input", csv.to_str().unwrap(), "--technique", "gini", "--learner", "logit"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["interpret", "--input", csv.to_str().unwrap(), "--technique", "type1", "--spec", "size1,nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
    let o = run(&["inspect", "--input", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["inspect", "--input", csv.to_str().unwrap(), "--label", "defects"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mitigate_writes_a_dataset_that_needs_no_further_mitigation() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 6);
    let out = dir.path().join("mitigated.csv");
    let r = report(&run(&["mitigate", "--input", csv.to_str().unwrap(), "--write-csv", out.to_str().unwrap()]));
    let surviving = r.body["surviving"].as_array().unwrap().len();
    assert!(surviving < 8);
    let again = report(&run(&["mitigate", "--input", out.to_str().unwrap()]));
    assert_eq!(again.body["surviving"].as_array().unwrap().len(), surviving);
    assert!(again.body["removed_by_varclus"].as_array().unwrap().is_empty());
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 7);
    let args = ["validate", "--input", csv.to_str().unwrap(), "--learner", "forest", "--boot", "5", "--trees", "10", "--seed", "11"];
    let a = report(&run(&args));
    let b = report(&run(&args));
    assert_eq!(a.body, b.body);
    assert_eq!(a.manifest.seed, Some(11));
}

#[test]
fn export_writes_plot_data_and_checks_kind() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8);
    let rep = dir.path().join("dilution.json");
    let o = run(&[
        "experiment", "dilution", "--input", csv.to_str().unwrap(), "--target", "size1", "--seed", "1", "--trees", "20",
        "--techniques", "type1,gini", "--out", rep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = dir.path().join("plots");
    let o = run(&["export", "--report", rep.to_str().unwrap(), "--out-dir", plots.to_str().unwrap(), "--expect", "dilution"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(plots.join("dilution.csv")).unwrap();
    assert!(table.starts_with("k,technique,target_share,relative_difference\n"));
    assert!(table.lines().any(|l| l.starts_with("1,type1,")));
    assert!(plots.join("dilution.svg").exists());

    let o = run(&["export", "--report", rep.to_str().unwrap(), "--out-dir", plots.to_str().unwrap(), "--expect", "rq4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_reports_record_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 9);
    let r = report(&run(&[
        "experiment", "orderswap", "--input", csv.to_str().unwrap(), "--target", "size1", "--seed", "4", "--trees", "20",
    ]));
    assert_eq!(r.kind, "orderswap");
    assert_eq!(r.manifest.seed, Some(4));
    assert_eq!(r.manifest.config["target"], "size1");
    assert_eq!(r.body["spec_first"][0], "size1");

    let r = report(&run(&["experiment", "prevalence", "--input", csv.to_str().unwrap()]));
    assert_eq!(r.manifest.seed, None);

    let o = run(&["experiment", "rq1", "--input", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
