//! Command-line front end: configuration merging, subcommand dispatch and
//! deterministic output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::DEFAULT_UCB_C;
use crate::harness::{
    aggregate, normality_test, pareto_sweep, privacy_audit, run_replications, AggregateOptions, AuditReport,
    AuditSpec, MetricsReport, NormalityReport, ParetoPoint, PolicyConfig, RunOptions,
};
use crate::instance::{validate_assumption, AssumptionReport, InstanceDoc, InstanceSpec};

pub const SEED_ENV: &str = "BANDITXD_SEED";
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("unknown policy `{0}` (expected conse, dpconse, rct, ucb or se-only)")]
    UnknownPolicy(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("`epsilon` is only accepted for dpconse and audit, not {0}")]
    UnexpectedEpsilon(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("{0}")]
    Instance(#[from] crate::error::InstanceError),
    #[error("invalid seed in {SEED_ENV}: {0}")]
    SeedEnv(String),
}

#[derive(Debug, Parser)]
#[command(name = "banditxd", version, about = "Simulate regret/accuracy trade-offs in adaptive two-arm experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Run,
    Sweep,
    Audit,
    Validate,
    Normality,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy and report regret and estimation error.
    Run(Flags),
    /// Sweep alpha and write Pareto points.
    Sweep(Flags),
    /// Audit the privacy mechanisms.
    Audit(Flags),
    /// Check the seasonal-balance condition on an instance.
    Validate(Flags),
    /// Test standardized estimation errors against N(0, 1).
    Normality(Flags),
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Run(f) => (CommandKind::Run, f),
            Command::Sweep(f) => (CommandKind::Sweep, f),
            Command::Audit(f) => (CommandKind::Audit, f),
            Command::Validate(f) => (CommandKind::Validate, f),
            Command::Normality(f) => (CommandKind::Normality, f),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Instance document (JSON).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications (trials for `audit`).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Exit with status 2 when the command's acceptance check fails.
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// Trial lengths of the private policy are drawn around this multiple of T_min.
    #[arg(long)]
    pub rct_multiplier: Option<f64>,
    #[arg(long)]
    pub ucb_c: Option<f64>,
    /// Score missing estimates as (0 - gap)^2 instead of dropping them.
    #[arg(long)]
    pub strict: bool,
    /// Write the event log of every replication.
    #[arg(long)]
    pub log_events: bool,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub log_floor_coeff: Option<f64>,
}

/// Instance given either as a path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceRef {
    Path(PathBuf),
    Inline(InstanceDoc),
}

/// Config file contents. Every field is optional; keys are kebab-case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    pub instance: Option<InstanceRef>,
    pub policy: Option<String>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub rct_multiplier: Option<f64>,
    pub ucb_c: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub alpha_grid: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub strict: Option<bool>,
    pub log_events: Option<bool>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub log_floor_coeff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub instance: Option<InstanceSpec>,
    pub policy: PolicyConfig,
    pub epsilon: Option<f64>,
    pub alpha_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub parallel: usize,
    pub check: bool,
    pub strict: bool,
    pub log_events: bool,
    pub c1: f64,
    pub c2: f64,
    pub log_floor_coeff: f64,
}

fn default_parallel() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn check_alpha(a: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(ConfigError::AlphaOutOfRange(a))
    }
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Invalid { field, message: format!("must be positive, got {v}") })
    }
}

fn load_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Merges flags over the config file (if any) and validates the result.
/// Relative instance paths in a config file resolve against the file's directory.
pub fn parse_config(command: CommandKind, flags: &Flags) -> Result<ExperimentConfig, ConfigError> {
    let (file, base) = match &flags.config {
        Some(p) => (load_file(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (ConfigFile::default(), PathBuf::new()),
    };
    merge(command, flags, file, &base)
}

fn merge(command: CommandKind, flags: &Flags, file: ConfigFile, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let instance_ref = match &flags.instance {
        Some(p) => Some(InstanceRef::Path(p.clone())),
        None => file.instance.map(|r| match r {
            InstanceRef::Path(p) if p.is_relative() => InstanceRef::Path(base.join(p)),
            other => other,
        }),
    };
    let instance = match instance_ref {
        Some(InstanceRef::Path(p)) => Some(InstanceSpec::load(&p)?),
        Some(InstanceRef::Inline(doc)) => Some(crate::instance::build_instance(&doc)?),
        None => None,
    };
    if instance.is_none() && command != CommandKind::Audit {
        return Err(ConfigError::Missing("instance"));
    }

    let alpha = check_alpha(flags.alpha.or(file.alpha).unwrap_or(0.5))?;
    let epsilon = flags.epsilon.or(file.epsilon).map(|e| positive("epsilon", e)).transpose()?;
    let policy_name = flags.policy.clone().or(file.policy).unwrap_or_else(|| "conse".to_string());
    let rct_multiplier = positive("rct-multiplier", flags.rct_multiplier.or(file.rct_multiplier).unwrap_or(1.0))?;
    let ucb_c = positive("ucb-c", flags.ucb_c.or(file.ucb_c).unwrap_or(DEFAULT_UCB_C))?;

    let policy = if command == CommandKind::Audit {
        let eps = epsilon.ok_or(ConfigError::Missing("epsilon"))?;
        PolicyConfig::Dpconse { alpha, epsilon: eps, rct_multiplier }
    } else {
        let p = match policy_name.as_str() {
            "conse" => PolicyConfig::Conse { alpha },
            "dpconse" => PolicyConfig::Dpconse {
                alpha,
                epsilon: epsilon.ok_or(ConfigError::Missing("epsilon"))?,
                rct_multiplier,
            },
            "rct" => PolicyConfig::Rct,
            "ucb" => PolicyConfig::Ucb { c: ucb_c },
            "se-only" => PolicyConfig::SeOnly,
            other => return Err(ConfigError::UnknownPolicy(other.to_string())),
        };
        if epsilon.is_some() && p.epsilon().is_none() {
            return Err(ConfigError::UnexpectedEpsilon(policy_name));
        }
        p
    };
    if matches!(command, CommandKind::Sweep | CommandKind::Normality) && policy.alpha().is_none() {
        return Err(ConfigError::Invalid {
            field: "policy",
            message: format!("{} needs conse or dpconse", if command == CommandKind::Sweep { "sweep" } else { "normality" }),
        });
    }

    let alpha_grid = flags.alpha_grid.clone().or(file.alpha_grid).unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec());
    for &a in &alpha_grid {
        check_alpha(a)?;
    }
    let default_reps = if command == CommandKind::Audit { 100_000 } else { 100 };
    let reps = flags.reps.or(file.reps).unwrap_or(default_reps);
    if reps == 0 {
        return Err(ConfigError::Invalid { field: "reps", message: "must be at least 1".into() });
    }
    let seed = match flags.seed.or(file.seed) {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| ConfigError::SeedEnv(v))?,
            Err(_) => 0,
        },
    };
    let parallel = flags.parallel.or(file.parallel).unwrap_or_else(default_parallel);
    if parallel == 0 {
        return Err(ConfigError::Invalid { field: "parallel", message: "must be at least 1".into() });
    }
    Ok(ExperimentConfig {
        command,
        instance,
        policy,
        epsilon,
        alpha_grid,
        reps,
        seed,
        out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("banditxd-out")),
        parallel,
        check: flags.check,
        strict: flags.strict || file.strict.unwrap_or(false),
        log_events: flags.log_events || file.log_events.unwrap_or(false),
        c1: flags.c1.or(file.c1).unwrap_or(1.5),
        c2: flags.c2.or(file.c2).unwrap_or(3.0),
        log_floor_coeff: flags.log_floor_coeff.or(file.log_floor_coeff).unwrap_or(1.0),
    })
}

/// Floats in CSV files: 12 significant digits in scientific notation.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_finite() {
        format!("{x:.11e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

impl OutputFile {
    fn text(name: &str, contents: String) -> Self {
        Self { name: name.to_string(), contents: contents.into_bytes() }
    }

    fn json<T: Serialize>(name: &str, value: &T) -> Self {
        let mut s = serde_json::to_string_pretty(value).expect("serializable report");
        s.push('\n');
        Self::text(name, s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes every file plus `manifest.json` (names, sizes and SHA-256 hashes, sorted by name).
pub fn write_outputs(files: &[OutputFile], dir: &Path) -> std::io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        fs::write(dir.join(&f.name), &f.contents)?;
        entries.push(ManifestEntry { name: f.name.clone(), bytes: f.contents.len() as u64, sha256: sha256_hex(&f.contents) });
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest { files: entries };
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    text.push('\n');
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

pub const PARETO_HEADER: &str = "policy,alpha,epsilon,M,n,mean_regret,se_regret,max_mse,se_mse,product";

pub fn pareto_csv(points: &[ParetoPoint]) -> String {
    let mut s = format!("{PARETO_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            p.policy,
            fmt_float(p.alpha),
            fmt_opt(p.epsilon),
            p.features,
            p.n,
            fmt_float(p.mean_regret),
            fmt_float(p.se_regret),
            fmt_float(p.max_mse),
            fmt_float(p.se_mse),
            fmt_float(p.product)
        );
    }
    s
}

pub const METRICS_HEADER: &str = "policy,alpha,epsilon,M,n,reps,metric,value";

/// Long format: one row per (policy, alpha, metric).
pub fn metrics_csv(policy: &PolicyConfig, r: &MetricsReport) -> String {
    let mut rows: Vec<(String, f64)> = vec![
        ("mean_regret".into(), r.mean_regret),
        ("se_regret".into(), r.se_regret),
        ("max_mse".into(), r.max_mse),
        ("se_max_mse".into(), r.se_max_mse),
        ("product".into(), r.product),
        ("normalized_product".into(), r.normalized_product),
    ];
    for f in &r.per_feature {
        let j = f.feature;
        rows.push((format!("mse_{j}"), f.mse));
        rows.push((format!("se_mse_{j}"), f.se_mse));
        rows.push((format!("final_mean_{j}"), f.final_mean));
        rows.push((format!("final_se_{j}"), f.final_se));
        rows.push((format!("final_count_{j}"), f.final_count as f64));
        rows.push((format!("missing_{j}"), f.missing as f64));
        rows.push((format!("under_sampled_{j}"), f.under_sampled as f64));
    }
    let mut s = format!("{METRICS_HEADER}\n");
    let prefix = format!(
        "{},{},{},{},{},{}",
        policy.name(),
        fmt_opt(policy.alpha()),
        fmt_opt(policy.epsilon()),
        r.features,
        r.horizon,
        r.reps
    );
    for (name, v) in rows {
        let _ = writeln!(s, "{prefix},{name},{}", fmt_float(v));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureNormality {
    pub feature: usize,
    pub report: Option<NormalityReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<OutputFile>,
    pub manifest: Option<Manifest>,
    /// `Some(pass)` when `--check` was requested.
    pub check: Option<bool>,
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.check {
            Some(false) => EXIT_CHECK_FAILED,
            _ => EXIT_OK,
        }
    }
}

fn unbiased(r: &MetricsReport) -> bool {
    r.per_feature.iter().all(|f| f.final_count < 2 || (f.final_mean - f.gap).abs() <= 3.0 * f.final_se)
}

fn instance(cfg: &ExperimentConfig) -> anyhow::Result<&InstanceSpec> {
    cfg.instance.as_ref().ok_or_else(|| ConfigError::Missing("instance").into())
}

/// Produces the output files of one command without touching the filesystem.
pub fn compute(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mut files = Vec::new();
    let (check, summary) = match cfg.command {
        CommandKind::Run => {
            let inst = instance(cfg)?;
            let opts = RunOptions { log_events: cfg.log_events, checkpoints: 32 };
            let traces = run_replications(inst, &cfg.policy, cfg.reps, cfg.seed, cfg.parallel, opts)?;
            if cfg.log_events {
                let mut log = String::new();
                for t in &traces {
                    for e in t.events.as_deref().unwrap_or_default() {
                        let mut v = serde_json::to_value(e)?;
                        v["rep"] = t.index.into();
                        log.push_str(&serde_json::to_string(&v)?);
                        log.push('\n');
                    }
                }
                files.push(OutputFile::text("events.jsonl", log));
            }
            let r = aggregate(&traces, inst, AggregateOptions { strict: cfg.strict })?;
            files.push(OutputFile::text("metrics.csv", metrics_csv(&cfg.policy, &r)));
            files.push(OutputFile::json("metrics.json", &r));
            let pass = cfg.policy.alpha().is_none() || unbiased(&r);
            (pass, format!(
                "{} reps={} mean_regret={} max_mse={} product={}",
                cfg.policy.name(),
                r.reps,
                fmt_float(r.mean_regret),
                fmt_float(r.max_mse),
                fmt_float(r.product)
            ))
        }
        CommandKind::Sweep => {
            let inst = instance(cfg)?;
            let pts = pareto_sweep(inst, &cfg.policy, &cfg.alpha_grid, cfg.reps, cfg.seed, cfg.parallel)?;
            files.push(OutputFile::text("pareto.csv", pareto_csv(&pts)));
            files.push(OutputFile::json("pareto.json", &pts));
            let pass = match (pts.first(), pts.last()) {
                (Some(lo), Some(hi)) => {
                    hi.mean_regret <= lo.mean_regret + 3.0 * (lo.se_regret + hi.se_regret)
                        && lo.max_mse <= hi.max_mse + 3.0 * (lo.se_mse + hi.se_mse)
                }
                _ => true,
            };
            (pass, format!("{} points written", pts.len()))
        }
        CommandKind::Audit => {
            let eps = cfg.policy.epsilon().expect("audit configs carry epsilon");
            let mut spec = AuditSpec::standard(eps, cfg.reps, cfg.seed, cfg.parallel);
            spec.alpha = cfg.policy.alpha().unwrap_or(0.0);
            let report: AuditReport = privacy_audit(&spec)?;
            let mut csv = String::from("check,name,value,bound,pass\n");
            for c in &report.laplace {
                let _ = writeln!(csv, "laplace,R={},{},{},{}", c.length, fmt_float(c.max_log_ratio), fmt_float(c.bound), c.pass && c.attained);
            }
            for c in &report.lap_plus {
                let _ = writeln!(csv, "lap_plus,m={},{},{},{}", fmt_float(c.m), fmt_float(c.max_ratio), fmt_float(c.bound), c.pass);
            }
            for c in &report.events {
                let bound = eps.exp() * c.p_d_prime + c.delta + c.slack;
                let _ = writeln!(csv, "event,{},{},{},{}", c.name, fmt_float(c.p_d), fmt_float(bound), c.pass);
            }
            files.push(OutputFile::text("audit.csv", csv));
            files.push(OutputFile::json("audit.json", &report));
            (report.pass, format!("audit {}", if report.pass { "passed" } else { "failed" }))
        }
        CommandKind::Validate => {
            let inst = instance(cfg)?;
            let report: AssumptionReport = validate_assumption(inst.arrival(), cfg.c1, cfg.c2, cfg.log_floor_coeff)?;
            files.push(OutputFile::json("assumption.json", &report));
            (report.pass, serde_json::to_string_pretty(&report)?)
        }
        CommandKind::Normality => {
            let inst = instance(cfg)?;
            let opts = RunOptions { log_events: false, checkpoints: 0 };
            let traces = run_replications(inst, &cfg.policy, cfg.reps, cfg.seed, cfg.parallel, opts)?;
            let r = aggregate(&traces, inst, AggregateOptions { strict: cfg.strict })?;
            let mut csv = String::from("feature,samples,ks_statistic,p_value,mean,variance\n");
            let mut rows = Vec::new();
            let mut pass = true;
            for f in &r.per_feature {
                match normality_test(&f.standardized) {
                    Ok(n) => {
                        pass &= n.p_value > 0.01 && (0.85..=1.15).contains(&n.variance);
                        let _ = writeln!(
                            csv,
                            "{},{},{},{},{},{}",
                            f.feature,
                            n.samples,
                            fmt_float(n.ks_statistic),
                            fmt_float(n.p_value),
                            fmt_float(n.mean),
                            fmt_float(n.variance)
                        );
                        rows.push(FeatureNormality { feature: f.feature, report: Some(n), error: None });
                    }
                    Err(e) => {
                        pass = false;
                        let _ = writeln!(csv, "{},{},,,,", f.feature, f.standardized.len());
                        rows.push(FeatureNormality { feature: f.feature, report: None, error: Some(e.to_string()) });
                    }
                }
            }
            files.push(OutputFile::text("normality.csv", csv));
            files.push(OutputFile::json("normality.json", &rows));
            (pass, format!("normality {} over {} features", if pass { "passed" } else { "failed" }, rows.len()))
        }
    };
    Ok(Outcome { files, manifest: None, check: cfg.check.then_some(check), summary })
}

/// Runs a command and writes its outputs plus the manifest.
pub fn execute(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mut outcome = compute(cfg)?;
    let manifest = write_outputs(&outcome.files, &cfg.out)
        .map_err(|e| anyhow::anyhow!("cannot write outputs to {}: {e}", cfg.out.display()))?;
    outcome.manifest = Some(manifest);
    Ok(outcome)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let (kind, flags) = cli.command.split();
    let cfg = match parse_config(kind, &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match execute(&cfg) {
        Ok(o) => {
            println!("{}", o.summary);
            if let Some(pass) = o.check {
                println!("check: {}", if pass { "PASS" } else { "FAIL" });
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
