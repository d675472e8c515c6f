//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on usage errors, 2 on data or validation errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset::{self, Dataset, SyntheticConfig, DEFAULT_POSITIVE_LABELS};
use crate::error::Error;
use crate::evaluation::{self, Learner, Measure};
use crate::experiments::{self, ExperimentConfig};
use crate::export::{self, InputDigest, Report, RunManifest, SCHEMA_VERSION};
use crate::forest::{self, ForestConfig};
use crate::glm::{self, ModelSpec, Type2Statistic};
use crate::importance::Technique;
use crate::mitigation::{self, MitigationConfig};
use crate::rank_stats;

pub const THREADS_ENV: &str = "METRIC_INTERP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "defect-interp", version, about = "Correlated-metric analysis and model interpretation for defect datasets")]
struct Cli {
    /// Worker threads [default: $METRIC_INTERP_THREADS, else all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset CSV: one column per metric plus the label column
    #[arg(long)]
    input: PathBuf,
    /// Name of the label column
    #[arg(long, default_value = "bug")]
    label: String,
    /// Label values meaning "defective" [default: 1,true,TRUE,yes,buggy]
    #[arg(long, value_delimiter = ',')]
    positive: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    Logit,
    Forest,
}

#[derive(Debug, Args)]
struct ForestArgs {
    /// Trees per forest
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Candidate metrics per split [default: floor(sqrt(p))]
    #[arg(long)]
    mtry: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentKind {
    Prevalence,
    Dilution,
    Orderswap,
    Rq1,
    Rq2,
    Rq3,
    Rq4,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a dataset summary (size, defect ratio, EPV)
    Inspect {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Remove correlated metrics (VarClus, then VIF)
    Mitigate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = mitigation::DEFAULT_RHO_THRESHOLD)]
        rho: f64,
        #[arg(long, default_value_t = mitigation::DEFAULT_VIF_THRESHOLD)]
        vif: f64,
        /// Metrics to prefer as cluster representatives, most preferred first
        #[arg(long, value_delimiter = ',')]
        priority: Option<Vec<String>>,
        /// Also write the mitigated dataset as CSV
        #[arg(long)]
        write_csv: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit a model and print it
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        learner: LearnerArg,
        /// Ordered metric list [default: all metrics in column order]
        #[arg(long, value_delimiter = ',')]
        spec: Option<Vec<String>>,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compute one importance table
    Interpret {
        #[command(flatten)]
        data: DataArgs,
        /// Learner; inferred from the technique when omitted
        #[arg(long, value_enum)]
        learner: Option<LearnerArg>,
        #[arg(long, value_parser = parse_technique)]
        technique: Technique,
        #[arg(long, value_delimiter = ',')]
        spec: Option<Vec<String>>,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Out-of-sample bootstrap validation
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        learner: LearnerArg,
        #[arg(long, default_value_t = evaluation::DEFAULT_N_BOOT)]
        boot: usize,
        #[arg(long, value_delimiter = ',')]
        spec: Option<Vec<String>>,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one of the analyses end to end
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Dataset CSV, or a directory of CSVs for rq3
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "bug")]
        label: String,
        #[arg(long, value_delimiter = ',')]
        positive: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap iterations feeding the rankings and evaluations
        #[arg(long, default_value_t = evaluation::DEFAULT_N_BOOT)]
        boot: usize,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_technique)]
        techniques: Option<Vec<Technique>>,
        #[arg(long, default_value_t = mitigation::DEFAULT_RHO_THRESHOLD)]
        rho: f64,
        #[arg(long, default_value_t = mitigation::DEFAULT_VIF_THRESHOLD)]
        vif: f64,
        #[arg(long, default_value_t = crate::skesd::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = crate::skesd::DEFAULT_NEGLIGIBLE_D)]
        negligible_d: f64,
        /// Target metric (dilution, orderswap)
        #[arg(long)]
        target: Option<String>,
        /// Correlated metrics to add, in order (dilution)
        #[arg(long, value_delimiter = ',')]
        pool: Option<Vec<String>>,
        /// Metrics whose order is swapped (orderswap)
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        /// Use the input as-is instead of mitigating it first (rq2)
        #[arg(long)]
        no_mitigate: bool,
        /// Top-k levels (rq3)
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3])]
        k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from a JSON config
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bug")]
        label: String,
    },
    /// Write tidy CSV and SVG views of a dilution, rq3 or rq4 report
    Export {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Fail unless the report is of this kind
        #[arg(long)]
        expect: Option<String>,
    },
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse::<Technique>().map_err(|e| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

struct Session {
    command: Vec<String>,
    started: u64,
    inputs: Vec<InputDigest>,
}

impl Session {
    fn load(&mut self, data: &DataArgs) -> CliResult<Dataset> {
        self.load_path(&data.input, &data.label, data.positive.as_deref())
    }

    fn load_path(&mut self, path: &Path, label: &str, positive: Option<&[String]>) -> CliResult<Dataset> {
        self.inputs.push(sha256_file(path)?);
        let positive: Vec<&str> = match positive {
            Some(p) => p.iter().map(String::as_str).collect(),
            None => DEFAULT_POSITIVE_LABELS.to_vec(),
        };
        Ok(dataset::load_csv(path, label, &positive)?)
    }

    fn report(&self, kind: &str, config: serde_json::Value, seed: Option<u64>, body: impl Serialize) -> CliResult<Report> {
        Ok(Report {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: self.command.clone(),
                config,
                seed,
                inputs: self.inputs.clone(),
                started_unix: self.started,
                finished_unix: now(),
            },
            body: serde_json::to_value(body).map_err(Error::from)?,
        })
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(p) => Ok(export::write_atomic(p, content.as_bytes())?),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn emit_report(out: &OutArgs, report: &Report, csv: Option<String>) -> CliResult<()> {
    let content = match (out.format, csv) {
        (Format::Json, _) => serde_json::to_string_pretty(report).map_err(Error::from)? + "\n",
        (Format::Csv, Some(c)) => c,
        (Format::Csv, None) => {
            return Err(CliError::Usage(format!(
                "--format csv is not available for `{}`; use json (and `export` for plot data)",
                report.kind
            )))
        }
    };
    emit(out.out.as_deref(), &content)
}

fn spec_for(d: &Dataset, spec: &Option<Vec<String>>) -> CliResult<ModelSpec> {
    Ok(match spec {
        Some(s) => {
            let spec = ModelSpec::new(s.iter().cloned())?;
            spec.validate(d)?;
            spec
        }
        None => ModelSpec::from_dataset(d)?,
    })
}

fn forest_config(args: &ForestArgs, seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: args.trees,
        mtry: args.mtry,
        min_node_size: 1,
        seed,
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Metrics other than `target`, by decreasing |rho| with it, above `threshold`.
fn correlated_with(d: &Dataset, target: &str, among: &[String], threshold: f64) -> CliResult<Vec<String>> {
    let t = d.column(target).ok_or_else(|| Error::UnknownMetrics(vec![target.to_string()]))?;
    let mut found = Vec::new();
    for m in among.iter().filter(|m| *m != target) {
        let rho = rank_stats::spearman(d.column(m).ok_or_else(|| Error::UnknownMetrics(vec![m.clone()]))?, t)?.rho;
        if rho.abs() > threshold {
            found.push((m.clone(), rho.abs()));
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(found.into_iter().map(|(m, _)| m).collect())
}

fn csv_files_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput("no .csv files in input directory").into());
    }
    Ok(files)
}

fn execute(cli: Cli, session: &mut Session) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Inspect { data, out } => {
            let d = session.load(&data)?;
            let summary = dataset::summarize(&d);
            let csv = format!(
                "key,value\nn_modules,{}\nn_metrics,{}\nn_defective,{}\ndefect_ratio,{}\nepv,{}\n",
                summary.n_modules, summary.n_metrics, summary.n_defective, summary.defect_ratio, summary.epv
            );
            let body = json!({ "dataset": d.name(), "metrics": d.metric_names(), "summary": summary });
            let report = session.report("inspect", json!({ "label": data.label }), None, body)?;
            emit_report(&out, &report, Some(csv))
        }
        Command::Mitigate {
            data,
            rho,
            vif,
            priority,
            write_csv,
            out,
        } => {
            let d = session.load(&data)?;
            let cfg = MitigationConfig {
                rho_threshold: rho,
                vif_threshold: vif,
                priority,
            };
            let (mitigated, report) = mitigation::mitigate(&d, &cfg)?;
            if let Some(path) = &write_csv {
                let mut buf = Vec::new();
                dataset::write_csv(&mitigated, &mut buf, &data.label)?;
                export::write_atomic(path, &buf)?;
            }
            let mut csv = String::from("metric,status\n");
            for m in d.metric_names() {
                let status = if report.surviving.contains(&m) {
                    "kept"
                } else if report.removed_by_varclus.contains(&m) {
                    "removed_varclus"
                } else {
                    "removed_vif"
                };
                csv.push_str(&format!("{m},{status}\n"));
            }
            let r = session.report("mitigate", serde_json::to_value(&cfg).map_err(Error::from)?, None, &report)?;
            emit_report(&out, &r, Some(csv))
        }
        Command::Fit {
            data,
            learner,
            spec,
            forest,
            seed,
            out,
        } => {
            let d = session.load(&data)?;
            let spec = spec_for(&d, &spec)?;
            let report = match learner {
                LearnerArg::Logit => {
                    let fit = glm::fit_logit(&d, &spec)?;
                    session.report("fit", json!({ "learner": "logit", "spec": spec }), None, &fit)?
                }
                LearnerArg::Forest => {
                    let seed = resolve_seed(seed);
                    let cfg = forest_config(&forest, seed);
                    let model = forest::fit_forest(&d, &spec, &cfg)?;
                    session.report("fit", json!({ "learner": "forest", "spec": spec, "forest": cfg }), Some(seed), &model)?
                }
            };
            emit_report(&out, &report, None)
        }
        Command::Interpret {
            data,
            learner,
            technique,
            spec,
            forest,
            seed,
            out,
        } => {
            let implied = if technique.is_logit() { LearnerArg::Logit } else { LearnerArg::Forest };
            if let Some(l) = learner {
                if l != implied {
                    return Err(CliError::Usage(format!(
                        "technique `{technique}` needs --learner {}",
                        if technique.is_logit() { "logit" } else { "forest" }
                    )));
                }
            }
            let d = session.load(&data)?;
            let spec = spec_for(&d, &spec)?;
            let (table, seed, config) = if technique.is_logit() {
                let table = match technique {
                    Technique::Type1 => glm::anova_type1(&d, &spec)?,
                    Technique::Type2Wald => glm::anova_type2(&d, &spec, Type2Statistic::Wald)?,
                    Technique::Type2Lr => glm::anova_type2(&d, &spec, Type2Statistic::Lr)?,
                    Technique::Type2F => glm::anova_type2(&d, &spec, Type2Statistic::F)?,
                    _ => glm::anova_type2(&d, &spec, Type2Statistic::Chisq)?,
                };
                (table.to_importance(), None, json!({ "learner": "logit", "technique": technique, "spec": spec }))
            } else {
                let seed = resolve_seed(seed);
                let cfg = forest_config(&forest, seed);
                let model = forest::fit_forest(&d, &spec, &cfg)?;
                let table = match technique {
                    Technique::Gini => forest::gini_importance(&model, false),
                    Technique::GiniScaled => forest::gini_importance(&model, true),
                    Technique::Perm => forest::permutation_importance(&model, &d, false, seed)?,
                    _ => forest::permutation_importance(&model, &d, true, seed)?,
                };
                (table, Some(seed), json!({ "learner": "forest", "technique": technique, "spec": spec, "forest": cfg }))
            };
            let csv = export::importance_csv(&table);
            let report = session.report("interpret", config, seed, &table)?;
            emit_report(&out, &report, Some(csv))
        }
        Command::Validate {
            data,
            learner,
            boot,
            spec,
            forest,
            seed,
            out,
        } => {
            let d = session.load(&data)?;
            let spec = spec_for(&d, &spec)?;
            let seed = resolve_seed(seed);
            let learner = match learner {
                LearnerArg::Logit => Learner::Logit,
                LearnerArg::Forest => Learner::Forest(forest_config(&forest, seed)),
            };
            let e = evaluation::bootstrap_evaluate(&d, &spec, &learner, boot, seed)?;
            let summary: serde_json::Map<String, serde_json::Value> = Measure::ALL
                .iter()
                .map(|m| (m.id().to_string(), json!({ "mean": e.mean(*m), "sd": e.sd(*m) })))
                .collect();
            let body = json!({ "summary": summary, "mean_oob_fraction": e.mean_oob_fraction(), "evaluation": e });
            let csv = export::evaluation_csv(&e);
            let report = session.report("validate", json!({ "learner": learner, "boot": boot, "spec": spec }), Some(seed), body)?;
            emit_report(&out, &report, Some(csv))
        }
        Command::Experiment {
            kind,
            input,
            label,
            positive,
            seed,
            boot,
            forest,
            techniques,
            rho,
            vif,
            alpha,
            negligible_d,
            target,
            pool,
            metrics,
            no_mitigate,
            k,
            out,
        } => {
            // Prevalence is deterministic and never draws a seed.
            let seeded = kind != ExperimentKind::Prevalence;
            let seed = if seeded { resolve_seed(seed) } else { seed.unwrap_or(0) };
            let cfg = ExperimentConfig {
                n_boot: boot,
                forest: forest_config(&forest, seed),
                alpha,
                negligible_d,
                mitigation: MitigationConfig {
                    rho_threshold: rho,
                    vif_threshold: vif,
                    priority: None,
                },
                techniques: techniques.clone().unwrap_or_else(|| Technique::ALL.to_vec()),
            };
            let mut config = serde_json::to_value(&cfg).map_err(Error::from)?;
            let is_dir = input.is_dir();
            if is_dir && kind != ExperimentKind::Rq3 {
                return Err(CliError::Usage("a directory input is only accepted by `experiment rq3`".into()));
            }
            let load_one = |s: &mut Session| s.load_path(&input, &label, positive.as_deref());
            let (name, body): (&str, serde_json::Value) = match kind {
                ExperimentKind::Prevalence => {
                    let d = load_one(session)?;
                    ("prevalence", to_value(experiments::prevalence_analysis(&d, rho)?)?)
                }
                ExperimentKind::Dilution => {
                    let target = target.ok_or_else(|| CliError::Usage("dilution needs --target".into()))?;
                    let d = load_one(session)?;
                    let keep_target = MitigationConfig {
                        priority: Some(vec![target.clone()]),
                        ..cfg.mitigation.clone()
                    };
                    let (mitigated, _) = mitigation::mitigate(&d, &keep_target)?;
                    let survivors = mitigated.metric_names();
                    if !survivors.contains(&target) {
                        return Err(Error::InvalidSpec(format!("target `{target}` does not survive mitigation")).into());
                    }
                    let pool = match pool {
                        Some(p) => p,
                        None => {
                            let removed: Vec<String> = d.metric_names().into_iter().filter(|m| !survivors.contains(m)).collect();
                            correlated_with(&d, &target, &removed, rho)?
                        }
                    };
                    if pool.is_empty() {
                        return Err(Error::InvalidSpec(format!("no removed metric correlates with `{target}` above {rho}")).into());
                    }
                    let techniques = techniques.unwrap_or_else(|| Technique::ALL.to_vec());
                    config["target"] = json!(target);
                    config["pool"] = json!(pool);
                    let r = experiments::dilution_analysis(&d, &ModelSpec::new(survivors)?, &pool, &target, &techniques, &cfg.forest, rho)?;
                    ("dilution", to_value(r)?)
                }
                ExperimentKind::Orderswap => {
                    let target = target.ok_or_else(|| CliError::Usage("orderswap needs --target".into()))?;
                    let d = load_one(session)?;
                    let metrics = match metrics {
                        Some(m) => m,
                        None => {
                            let mut m = vec![target.clone()];
                            m.extend(correlated_with(&d, &target, &d.metric_names(), rho)?.into_iter().take(4));
                            m
                        }
                    };
                    let techniques = techniques.unwrap_or_else(|| vec![Technique::Type1, Technique::Gini]);
                    config["target"] = json!(target);
                    config["metrics"] = json!(metrics);
                    let r = experiments::order_swap_analysis(&d, &metrics, &target, &techniques, &cfg.forest)?;
                    ("orderswap", to_value(r)?)
                }
                ExperimentKind::Rq1 => ("rq1", to_value(experiments::rq1(&load_one(session)?, &cfg, seed)?)?),
                ExperimentKind::Rq2 => {
                    let d = load_one(session)?;
                    let d = if no_mitigate { d } else { mitigation::mitigate(&d, &cfg.mitigation)?.0 };
                    config["mitigated"] = json!(!no_mitigate);
                    ("rq2", to_value(experiments::rq2(&d, &cfg, seed)?)?)
                }
                ExperimentKind::Rq3 => {
                    let files = if is_dir { csv_files_in(&input)? } else { vec![input.clone()] };
                    let datasets = files
                        .iter()
                        .map(|f| session.load_path(f, &label, positive.as_deref()))
                        .collect::<CliResult<Vec<_>>>()?;
                    config["k"] = json!(k);
                    ("rq3", to_value(experiments::rq3(&datasets, &cfg, seed, &k)?)?)
                }
                ExperimentKind::Rq4 => ("rq4", to_value(experiments::rq4(&load_one(session)?, &cfg, seed)?)?),
            };
            let report = session.report(name, config, seeded.then_some(seed), body)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
            emit(out.as_deref(), &json)
        }
        Command::Synthesize { config, seed, out, label } => {
            session.inputs.push(sha256_file(&config)?);
            let text = std::fs::read_to_string(&config).map_err(|source| Error::Io {
                path: config.display().to_string(),
                source,
            })?;
            let cfg: SyntheticConfig = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", config.display())))?;
            let seed = resolve_seed(seed);
            let s = dataset::synthesize(&cfg, seed)?;
            let mut buf = Vec::new();
            dataset::write_csv(&s.dataset, &mut buf, &label)?;
            export::write_atomic(&out, &buf)?;
            let body = json!({ "output": out.display().to_string(), "summary": dataset::summarize(&s.dataset), "cluster_rho": s.cluster_rho });
            let report = session.report("synthesize", to_value(&cfg)?, Some(seed), body)?;
            emit(None, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))
        }
        Command::Export { report, out_dir, expect } => {
            let text = std::fs::read_to_string(&report).map_err(|source| Error::Io {
                path: report.display().to_string(),
                source,
            })?;
            let r: Report = serde_json::from_str(&text).map_err(Error::from)?;
            if let Some(kind) = expect {
                if kind != r.kind {
                    return Err(Error::ReportKind { expected: kind, found: r.kind }.into());
                }
            }
            for f in export::export_plot_data(&r, &out_dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn to_value(v: impl Serialize) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut session = Session {
        command: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        started: now(),
        inputs: Vec::new(),
    };
    match execute(cli, &mut session) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
