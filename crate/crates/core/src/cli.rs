//! Command-line front end.
//!
//! Every subcommand writes its results as CSV to `--out` (header row, fixed
//! column order, 17 significant digits) and appends one JSON line describing
//! the run to `--log`. Exit codes: 0 success, 1 a checked inequality or
//! soundness property failed, 2 usage or configuration error.
//!
//! A configuration file given with `--config` holds `section.key = value`
//! lines. Keys in the section named after the subcommand, and keys in
//! `common` that the subcommand accepts, act as if passed as `--key value`;
//! flags on the command line take precedence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{self, BoundFamily, BoundParams, BoundReport};
use crate::compare::{self, SweepConfig};
use crate::error::{Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::instance::{self, Instance};
use crate::model;
use crate::posterior_opt;
use crate::processes::{self, SymmetrizationInstance, SymmetrizationParams, SymmetrizationVariant};
use crate::rng;
use crate::verify::{self, CoverageConfig, PosteriorRule, RuleOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Columns of the `bounds` CSV.
pub const BOUNDS_HEADER: [&str; 10] = [
    "family",
    "value",
    "emp_term",
    "complexity_term",
    "flatness_term",
    "C_derived",
    "lambda_over_m",
    "C1",
    "C2",
    "C3",
];
/// Columns of the `coverage` CSV.
pub const COVERAGE_HEADER: [&str; 5] = ["family", "trials", "violations", "cp_upper", "mean_slack"];
/// Columns of the `sweep` CSV.
pub const SWEEP_HEADER: [&str; 6] = ["m", "catoni_mean", "flatness_mean", "T_m_mean", "kl_mean", "crossover_flag"];
/// Columns of the `lemmas` CSV.
pub const LEMMAS_HEADER: [&str; 6] = ["lemma", "quantity", "value", "halfwidth", "limit", "status"];
/// Columns of the `duality` CSV.
pub const DUALITY_HEADER: [&str; 5] = ["instance", "kappa", "primal", "dual", "gap"];
/// Columns of the `optimize` CSV.
pub const OPTIMIZE_HEADER: [&str; 9] = [
    "family",
    "beta",
    "accepted_steps",
    "value",
    "emp_term",
    "complexity_term",
    "flatness_term",
    "kl",
    "true_gibbs_risk",
];

#[derive(Parser, Debug)]
#[command(name = "pacbayes", version, about = "PAC-Bayes bounds on finite hypothesis classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate bounds from an empirical risk, a KL and a sample size.
    Bounds(BoundsArgs),
    /// Count bound violations over repeated samples.
    Coverage(CoverageArgs),
    /// Check one of the moment-generating-function or tail inequalities.
    Lemmas(LemmasArgs),
    /// Compare the KL-ball supremum with its dual.
    Duality(DualityArgs),
    /// Find a posterior minimizing a bound on one sample.
    Optimize(OptimizeArgs),
    /// Sweep the sample size comparing the flatness and Catoni bounds.
    Sweep(SweepArgs),
    /// Write a random instance file.
    GenInstance(GenInstanceArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file with `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice; required by stochastic subcommands.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run log; one JSON line is appended per invocation.
    #[arg(long, default_value = "pacbayes-runs.jsonl")]
    log: PathBuf,
}

#[derive(Args, Debug)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Catoni's C.
    #[arg(long = "C", default_value_t = 1.0)]
    catoni_c: f64,
    /// Empirical-risk inflation of the matched-Catoni and flatness bounds.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Auxiliary constant of the matched-Catoni bound (default c/2).
    #[arg(long)]
    c2: Option<f64>,
    /// Flatness exponent.
    #[arg(long, default_value_t = 0.5)]
    h: f64,
}

impl ParamArgs {
    fn params(&self) -> BoundParams {
        BoundParams {
            delta: self.delta,
            catoni_c: self.catoni_c,
            c: self.c,
            c2: self.c2,
            h: self.h,
        }
    }
}

#[derive(Args, Debug)]
struct RuleArgs {
    /// Posterior rule: fixed, gibbs-posterior or bound-minimizer.
    #[arg(long, default_value = "gibbs-posterior")]
    rule: String,
    /// Temperature of the gibbs-posterior rule.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Temperatures tried by the bound-minimizer rule.
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    refine_steps: usize,
}

impl RuleArgs {
    fn rule(&self, inst: &Instance) -> Result<PosteriorRule> {
        let defaults = RuleOptions::default();
        PosteriorRule::from_id(
            &self.rule,
            &RuleOptions {
                beta: self.beta,
                beta_grid: self.beta_grid.clone().unwrap_or(defaults.beta_grid),
                refine_steps: self.refine_steps,
                fixed: inst.posterior.clone(),
            },
        )
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    params: ParamArgs,
    /// Empirical Gibbs risk.
    #[arg(long)]
    emp: f64,
    /// KL(Q || P).
    #[arg(long)]
    kl: f64,
    /// Sample size.
    #[arg(long)]
    m: usize,
    /// h-flatness of the posterior (flatness family only).
    #[arg(long)]
    flatness: Option<f64>,
    /// Families to evaluate, or `all`.
    #[arg(long = "family", alias = "families", value_delimiter = ',', default_value = "all")]
    families: Vec<String>,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long = "family", alias = "families", value_delimiter = ',', default_value = "all")]
    families: Vec<String>,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Lemma {
    Debias,
    Xy,
    ShiftedFlatness,
    Symmetrization,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Linear,
    Quadratic,
}

#[derive(Args, Debug)]
struct LemmasArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    which: Lemma,
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Shift of the debiased Rademacher variables.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    lambda_over_m: Option<f64>,
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Bernoulli means for the XY check.
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    h: f64,
    /// Evaluate the XY check even when its parameter constraints fail.
    #[arg(long)]
    force: bool,
    /// Hypothesis index for the shifted-flatness tail.
    #[arg(long, default_value_t = 0)]
    f: usize,
    /// Tail level (default: the smallest level the inequality covers).
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, value_enum, default_value = "linear")]
    variant: Variant,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
}

#[derive(Args, Debug)]
struct DualityArgs {
    #[command(flatten)]
    common: Common,
    /// KL radii.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,3")]
    kappa: Vec<f64>,
    /// Explicit prior weights; random instances are drawn when absent.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    atoms: usize,
    #[arg(long, default_value_t = 50)]
    instances: usize,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "catoni")]
    family: String,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    refine_steps: usize,
    /// Write the instance with the optimized posterior here.
    #[arg(long)]
    posterior_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    instance: PathBuf,
    /// Posterior rule; defaults to `fixed` when the instance has a posterior.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    refine_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    h: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Explicit sample sizes; otherwise a geometric grid from --m-min to --m-max.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    m_min: usize,
    #[arg(long, default_value_t = 40_000)]
    m_max: usize,
    #[arg(long, default_value_t = 1.25)]
    m_ratio: f64,
    #[arg(long, default_value_t = 50)]
    trials: u64,
}

#[derive(Args, Debug)]
struct GenInstanceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 20)]
    hypotheses: usize,
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Losses in [0, 1] instead of {0, 1}.
    #[arg(long)]
    non_binary: bool,
}

/// `section.key = value` settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<(String, String), String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, "expected `section.key = value`"))?;
            let (section, name) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::parse(line, format!("key '{}' has no section", key.trim())))?;
            let section = section.trim().replace('_', "-");
            let name = name.trim().replace('_', "-");
            if section.is_empty() || name.is_empty() {
                return Err(Error::parse(line, "empty section or key"));
            }
            if entries
                .insert((section.clone(), name.clone()), value.trim().to_string())
                .is_some()
            {
                return Err(Error::parse(line, format!("duplicate key {section}.{name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    fn sections(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|(s, _)| s.as_str())
    }

    fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter(move |((s, _), _)| s == name)
            .map(|((_, k), v)| (k.as_str(), v.as_str()))
    }
}

fn flag_present(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("{flag}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends the configuration file's settings for the subcommand in `args`.
fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(sub) = args.get(1).filter(|a| !a.starts_with('-')).cloned() else {
        return Ok(args);
    };
    let config_path = args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(config_path) = config_path else {
        return Ok(args);
    };
    let config = Config::load(Path::new(&config_path))?;

    let command = Cli::command();
    let Some(sub_cmd) = command.find_subcommand(&sub) else {
        return Ok(args);
    };
    let known: Vec<String> = command.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for section in config.sections() {
        if section != "common" && !known.iter().any(|k| k == section) {
            return Err(Error::invalid(format!("unknown configuration section '{section}'")));
        }
    }

    let accepts = |key: &str| sub_cmd.get_arguments().find(|a| a.get_long() == Some(key));
    let mut settings: BTreeMap<&str, &str> = BTreeMap::new();
    for (key, value) in config.section("common") {
        if accepts(key).is_some() {
            settings.insert(key, value);
        }
    }
    for (key, value) in config.section(&sub) {
        settings.insert(key, value);
    }

    let mut merged = args.clone();
    for (key, value) in settings {
        if key == "config" || flag_present(&args, key) {
            continue;
        }
        let takes_value = accepts(key).map(|a| a.get_action().takes_values()).unwrap_or(true);
        if takes_value {
            merged.push(format!("--{key}"));
            merged.push(value.to_string());
        } else {
            match value {
                "true" => merged.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(Error::invalid(format!("{sub}.{key} must be true or false, got '{other}'")));
                }
            }
        }
    }
    Ok(merged)
}

/// SHA-256 of the effective settings, ignoring output locations.
fn config_hash(args: &[String]) -> String {
    let mut hasher = Sha256::new();
    let mut skip_next = false;
    for a in args.iter().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        if ["--out", "--log", "--config", "--posterior-out"].contains(&a.as_str()) {
            skip_next = true;
            continue;
        }
        if ["--out=", "--log=", "--config=", "--posterior-out="]
            .iter()
            .any(|p| a.starts_with(p))
        {
            continue;
        }
        hasher.update(a.as_bytes());
        hasher.update([0u8]);
    }
    format!("{:x}", hasher.finalize())
}

/// Seventeen significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn parse_families(names: &[String]) -> Result<Vec<BoundFamily>> {
    if names.iter().any(|n| n.trim().eq_ignore_ascii_case("all")) {
        return Ok(BoundFamily::ALL.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        let f: BoundFamily = n.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no bound families requested"));
    }
    Ok(out)
}

fn require_seed(common: &Common, command: &str) -> Result<u64> {
    common
        .seed
        .ok_or_else(|| Error::invalid(format!("{command} is stochastic: --seed is required")))
}

fn write_csv(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let Some(path) = path else {
        return Ok(());
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

struct Outcome {
    passed: bool,
    seed: Option<u64>,
    summary: Value,
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn bounds_row(report: &BoundReport) -> Vec<String> {
    let k = report.constants.as_ref();
    let derived = match report.family {
        BoundFamily::MatchedCatoni => k.map(|k| k.c_big),
        _ => report.rate_constant,
    };
    vec![
        report.family.to_string(),
        fmt_num(report.value),
        fmt_num(report.components.empirical),
        fmt_num(report.components.complexity),
        fmt_num(report.components.flatness),
        fmt_opt(derived),
        fmt_opt(k.map(|k| k.lambda_over_m)),
        fmt_opt(k.map(|k| k.c1)),
        fmt_opt(k.map(|k| k.c2)),
        fmt_opt(k.map(|k| k.c3)),
    ]
}

fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> Result<Outcome> {
    let params = a.params.params();
    let families = parse_families(&a.families)?;
    let inputs = bounds::BoundInputs {
        emp: a.emp,
        kl: a.kl,
        m: a.m,
        flatness: a.flatness,
    };
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for family in families {
        let report = bounds::evaluate(family, &params, &inputs)?;
        writeln!(
            out,
            "{:<15} value {:.5}  empirical {:.5}  flatness {:.5}  complexity {:.5}",
            family.name(),
            report.value,
            report.components.empirical,
            report.components.flatness,
            report.components.complexity
        )?;
        summary.insert(family.to_string(), json!(report.value));
        rows.push(bounds_row(&report));
    }
    write_csv(a.common.out.as_deref(), &BOUNDS_HEADER, &rows)?;
    Ok(Outcome {
        passed: true,
        seed: a.common.seed,
        summary: Value::Object(summary),
    })
}

fn cmd_coverage(a: &CoverageArgs, out: &mut dyn Write) -> Result<Outcome> {
    let seed = require_seed(&a.common, "coverage")?;
    let inst = Instance::load(&a.instance)?;
    let rule = a.rule.rule(&inst)?;
    let families = parse_families(&a.families)?;
    let config = CoverageConfig {
        params: a.params.params(),
        m: a.m,
        trials: a.trials,
        seed,
    };
    let reports = verify::coverage_experiments(&inst.table, &inst.dist, &inst.prior, &rule, &families, &config)?;
    let mut rows = Vec::new();
    let mut passed = true;
    let mut summary = serde_json::Map::new();
    // With too few trials even zero violations cannot bring the upper limit below delta.
    let attainable = verify::clopper_pearson_upper(0, a.trials, 0.95)? <= a.params.delta;
    for r in &reports {
        let ok = r.clopper_pearson_upper <= a.params.delta;
        let status = if ok {
            "PASS"
        } else if !attainable && r.violations == 0 {
            "UNDERPOWERED"
        } else {
            passed = false;
            "FAIL"
        };
        writeln!(
            out,
            "{:<15} violations {}/{}  cp_upper {:.5}  mean_slack {:.5}  {status}",
            r.family.name(),
            r.violations,
            r.trials,
            r.clopper_pearson_upper,
            r.mean_slack,
        )?;
        summary.insert(
            r.family.to_string(),
            json!({"violations": r.violations, "cp_upper": r.clopper_pearson_upper}),
        );
        rows.push(vec![
            r.family.to_string(),
            r.trials.to_string(),
            r.violations.to_string(),
            fmt_num(r.clopper_pearson_upper),
            fmt_num(r.mean_slack),
        ]);
    }
    write_csv(a.common.out.as_deref(), &COVERAGE_HEADER, &rows)?;
    Ok(Outcome {
        passed,
        seed: Some(seed),
        summary: Value::Object(summary),
    })
}

fn load_required(path: &Option<PathBuf>, what: &str) -> Result<Instance> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{what} needs --instance")))?;
    Instance::load(p)
}

fn cmd_lemmas(a: &LemmasArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let status_of = |applies: bool, ok: bool| if !applies { "OUTSIDE" } else { pass_word(ok) };
    let (passed, seed, summary) = match a.which {
        Lemma::Debias => {
            let inst = load_required(&a.instance, "the debias check")?;
            let x = a
                .lambda_over_m
                .ok_or_else(|| Error::invalid("the debias check needs --lambda-over-m"))?;
            let threshold = bounds::log_cosh(x) / x;
            let k = a.k.unwrap_or(threshold);
            let value = processes::debias_mgf_exact(&inst.prior, &inst.table, &inst.dist, x, k, a.m)?;
            let applies = k >= threshold;
            let ok = value <= 1.0 + 1e-12;
            let status = status_of(applies, ok);
            writeln!(out, "debias mgf {value:.12}  (k {k}, threshold {threshold:.12})  {status}")?;
            rows.push(vec!["debias".into(), "mgf".into(), fmt_num(value), String::new(), fmt_num(1.0), status.into()]);
            (!applies || ok, a.common.seed, json!({"value": value, "k": k, "status": status}))
        }
        Lemma::Xy => {
            let mu = a.mu.clone().ok_or_else(|| Error::invalid("the XY check needs --mu"))?;
            let c2 = a.c2.unwrap_or_else(|| bounds::flatness_c2(a.c, a.h));
            let cap = processes::xy_lambda_cap(a.c, c2, a.h);
            let x = a.lambda_over_m.unwrap_or(cap / 2.0);
            let (value, applies) = if a.force {
                let e = processes::xy_mgf_bruteforce_forced(&mu, x, a.c, c2, a.h)?;
                (e.value, e.constraints_hold)
            } else {
                (processes::xy_mgf_bruteforce(&mu, x, a.c, c2, a.h)?, true)
            };
            let ok = value <= 1.0 + 1e-12;
            let status = status_of(applies, ok);
            writeln!(out, "xy mgf {value:.12}  (lambda/m {x}, cap {cap:.12})  {status}")?;
            rows.push(vec!["xy".into(), "mgf".into(), fmt_num(value), String::new(), fmt_num(1.0), status.into()]);
            (!applies || ok, a.common.seed, json!({"value": value, "status": status}))
        }
        Lemma::ShiftedFlatness => {
            let seed = require_seed(&a.common, "the shifted-flatness check")?;
            let inst = load_required(&a.instance, "the shifted-flatness check")?;
            let c2 = a.c2.unwrap_or_else(|| bounds::flatness_c2(a.c, a.h));
            let threshold = processes::shifted_flatness_threshold(a.m, c2, a.h);
            let t = a.t.unwrap_or(threshold);
            let est = processes::shifted_flatness_tail_mc(&inst.table, a.f, &inst.dist, a.m, c2, a.h, t, a.trials, seed)?;
            let applies = t >= threshold;
            let ok = est.probability <= 0.5 + est.wilson_halfwidth;
            let status = status_of(applies, ok);
            writeln!(
                out,
                "shifted-flatness tail {:.6} ± {:.6}  (t {t:.6}, threshold {threshold:.6})  {status}",
                est.probability, est.wilson_halfwidth
            )?;
            rows.push(vec![
                "shifted_flatness".into(),
                "tail_probability".into(),
                fmt_num(est.probability),
                fmt_num(est.wilson_halfwidth),
                fmt_num(0.5),
                status.into(),
            ]);
            (!applies || ok, Some(seed), json!({"probability": est.probability, "status": status}))
        }
        Lemma::Symmetrization => {
            let seed = require_seed(&a.common, "the symmetrization check")?;
            let inst = load_required(&a.instance, "the symmetrization check")?;
            let (variant, default_c2) = match a.variant {
                Variant::Linear => (SymmetrizationVariant::Linear, a.c / 2.0),
                Variant::Quadratic => (SymmetrizationVariant::Quadratic { h: a.h }, bounds::flatness_c2(a.c, a.h)),
            };
            let params = SymmetrizationParams {
                variant,
                c: a.c,
                c2: a.c2.unwrap_or(default_c2),
                kappa: a.kappa,
                m: a.m,
            };
            let min_t = params.min_t();
            let t = a.t.unwrap_or(min_t);
            let sym = SymmetrizationInstance {
                table: &inst.table,
                dist: &inst.dist,
                prior: &inst.prior,
            };
            let tails = processes::symmetrization_tail_mc(&sym, &params, t, a.trials, seed)?;
            let limit = 4.0 * tails.rhs.probability + tails.lhs.wilson_halfwidth + tails.rhs.wilson_halfwidth;
            let applies = t >= min_t;
            let ok = tails.lhs.probability <= limit;
            let status = status_of(applies, ok);
            writeln!(
                out,
                "symmetrization lhs {:.6} ± {:.6}  rhs {:.6} ± {:.6}  (t {t:.6})  {status}",
                tails.lhs.probability, tails.lhs.wilson_halfwidth, tails.rhs.probability, tails.rhs.wilson_halfwidth
            )?;
            rows.push(vec![
                "symmetrization".into(),
                "lhs_tail".into(),
                fmt_num(tails.lhs.probability),
                fmt_num(tails.lhs.wilson_halfwidth),
                fmt_num(limit),
                status.into(),
            ]);
            rows.push(vec![
                "symmetrization".into(),
                "rhs_tail".into(),
                fmt_num(tails.rhs.probability),
                fmt_num(tails.rhs.wilson_halfwidth),
                String::new(),
                String::new(),
            ]);
            (
                !applies || ok,
                Some(seed),
                json!({"lhs": tails.lhs.probability, "rhs": tails.rhs.probability, "status": status}),
            )
        }
    };
    write_csv(a.common.out.as_deref(), &LEMMAS_HEADER, &rows)?;
    Ok(Outcome { passed, seed, summary })
}

fn cmd_duality(a: &DualityArgs, out: &mut dyn Write) -> Result<Outcome> {
    let grid = processes::default_lambda_grid();
    let problems: Vec<(ProbMeasure, Vec<f64>)> = match (&a.weights, &a.values) {
        (Some(w), Some(v)) => vec![(ProbMeasure::from_weights(w)?, v.clone())],
        (None, None) => {
            let seed = require_seed(&a.common, "duality with random instances")?;
            if a.atoms == 0 {
                return Err(Error::invalid("--atoms must be at least 1"));
            }
            (0..a.instances as u64)
                .map(|i| {
                    use rand::Rng;
                    let mut r = rng::stream(rng::derive_seed(seed, i), 0);
                    let w: Vec<f64> = (0..a.atoms).map(|_| 0.05 + r.random::<f64>()).collect();
                    let v: Vec<f64> = (0..a.atoms).map(|_| r.random::<f64>()).collect();
                    Ok((ProbMeasure::from_weights(&w)?, v))
                })
                .collect::<Result<_>>()?
        }
        _ => return Err(Error::invalid("--weights and --values must be given together")),
    };
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, (p, v)) in problems.iter().enumerate() {
        for &kappa in &a.kappa {
            let primal = processes::kl_ball_sup(p, v, kappa)?;
            let dual = processes::kl_dual_value(p, v, kappa, &grid)?;
            worst = worst.max((dual - primal).abs());
            rows.push(vec![i.to_string(), fmt_num(kappa), fmt_num(primal), fmt_num(dual), fmt_num(dual - primal)]);
        }
    }
    let passed = worst <= 1e-6;
    writeln!(out, "duality: {} problems, max |dual - primal| = {worst:.3e}  {}", problems.len(), pass_word(passed))?;
    write_csv(a.common.out.as_deref(), &DUALITY_HEADER, &rows)?;
    Ok(Outcome {
        passed,
        seed: a.common.seed,
        summary: json!({"problems": problems.len(), "max_gap": worst}),
    })
}

fn cmd_optimize(a: &OptimizeArgs, out: &mut dyn Write) -> Result<Outcome> {
    let seed = require_seed(&a.common, "optimize")?;
    let inst = Instance::load(&a.instance)?;
    let family: BoundFamily = a.family.parse()?;
    let params = a.params.params();
    let grid = a.beta_grid.clone().unwrap_or(RuleOptions::default().beta_grid);
    let s = model::draw_sample(&inst.dist, a.m, seed)?;
    let best = posterior_opt::minimize_bound(family, &params, &inst.prior, &inst.table, &s, &grid, a.refine_steps)?;
    let kl = gibbs::kl_divergence(&best.posterior, &inst.prior)?;
    let risk = gibbs::gibbs_risk(&best.posterior, &inst.table, &inst.dist)?;
    let r = &best.report;
    writeln!(
        out,
        "{} bound {:.6} (start beta {}, {} refinement steps accepted), KL {:.6}, true Gibbs risk {:.6}",
        family.name(),
        r.value,
        best.beta,
        best.accepted_steps,
        kl,
        risk
    )?;
    let row = vec![
        family.to_string(),
        fmt_num(best.beta),
        best.accepted_steps.to_string(),
        fmt_num(r.value),
        fmt_num(r.components.empirical),
        fmt_num(r.components.complexity),
        fmt_num(r.components.flatness),
        fmt_num(kl),
        fmt_num(risk),
    ];
    write_csv(a.common.out.as_deref(), &OPTIMIZE_HEADER, &[row])?;
    if let Some(path) = &a.posterior_out {
        Instance::new(inst.dist.clone(), inst.table.clone(), inst.prior.clone(), Some(best.posterior.clone()))?.save(path)?;
    }
    Ok(Outcome {
        passed: true,
        seed: Some(seed),
        summary: json!({"family": family.to_string(), "value": r.value, "true_gibbs_risk": risk}),
    })
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<Outcome> {
    let seed = require_seed(&a.common, "sweep")?;
    let inst = Instance::load(&a.instance)?;
    let rule_id = a
        .rule
        .clone()
        .unwrap_or_else(|| if inst.posterior.is_some() { "fixed" } else { "gibbs-posterior" }.into());
    let rule = RuleArgs {
        rule: rule_id,
        beta: a.beta,
        beta_grid: a.beta_grid.clone(),
        refine_steps: a.refine_steps,
    }
    .rule(&inst)?;
    let m_grid = match &a.m_grid {
        Some(g) => g.clone(),
        None => compare::geometric_grid(a.m_min, a.m_max, a.m_ratio)?,
    };
    let config = SweepConfig {
        c: a.c,
        h: a.h,
        delta: a.delta,
        m_grid,
        trials: a.trials,
        seed,
    };
    let table = compare::bound_sweep(&inst.table, &inst.dist, &inst.prior, &rule, &config)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.m.to_string(),
                fmt_num(r.catoni_mean),
                fmt_num(r.flatness_mean),
                fmt_num(r.t_m_mean),
                fmt_num(r.kl_mean),
                r.crossover_flag.to_string(),
            ]
        })
        .collect();
    let threshold = table.schematic_threshold().ok();
    let m_star = table.crossover_m.map(|m| m.to_string()).unwrap_or_else(|| "inf".into());
    writeln!(
        out,
        "crossover m* = {m_star}; schematic threshold at mean T_m = {}",
        threshold.map(|t| format!("{t:.1}")).unwrap_or_else(|| "undefined (T_m = 0)".into())
    )?;
    write_csv(a.common.out.as_deref(), &SWEEP_HEADER, &rows)?;
    Ok(Outcome {
        passed: true,
        seed: Some(seed),
        summary: json!({"crossover_m": table.crossover_m, "schematic_threshold": threshold, "mean_T_m": table.mean_t_m()}),
    })
}

fn cmd_gen_instance(a: &GenInstanceArgs, out: &mut dyn Write) -> Result<Outcome> {
    let seed = require_seed(&a.common, "gen-instance")?;
    let inst = instance::random_instance(a.hypotheses, a.points, !a.non_binary, seed)?;
    match &a.common.out {
        Some(path) => inst.save(path)?,
        None => out.write_all(inst.to_text().as_bytes())?,
    }
    Ok(Outcome {
        passed: true,
        seed: Some(seed),
        summary: json!({"hypotheses": a.hypotheses, "points": a.points, "binary": !a.non_binary}),
    })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PACBAYES_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::invalid(format!("PACBAYES_THREADS must be a positive integer, got '{v}'")))?;
        // The global pool can be built once per process; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn append_log(path: &Path, record: &Value) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{record}")?;
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = match args
        .into_iter()
        .map(|a| a.into().into_string())
        .collect::<std::result::Result<_, _>>()
    {
        Ok(a) => a,
        Err(_) => {
            let _ = writeln!(err, "error: arguments must be valid UTF-8");
            return EXIT_USAGE;
        }
    };
    let usage_error = |err: &mut dyn Write, e: &Error, sub: Option<&str>| {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = match sub.and_then(|name| cmd.find_subcommand_mut(name)) {
            Some(sub_cmd) => sub_cmd.render_usage(),
            None => cmd.render_usage(),
        };
        let _ = writeln!(err, "error: {e}\n\n{usage}");
        EXIT_USAGE
    };
    if let Err(e) = configure_threads() {
        return usage_error(err, &e, None);
    }
    let sub = args.get(1).cloned();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => return usage_error(err, &e, sub.as_deref()),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };

    let (name, common, result) = match &cli.command {
        Command::Bounds(a) => ("bounds", &a.common, cmd_bounds(a, out)),
        Command::Coverage(a) => ("coverage", &a.common, cmd_coverage(a, out)),
        Command::Lemmas(a) => ("lemmas", &a.common, cmd_lemmas(a, out)),
        Command::Duality(a) => ("duality", &a.common, cmd_duality(a, out)),
        Command::Optimize(a) => ("optimize", &a.common, cmd_optimize(a, out)),
        Command::Sweep(a) => ("sweep", &a.common, cmd_sweep(a, out)),
        Command::GenInstance(a) => ("gen-instance", &a.common, cmd_gen_instance(a, out)),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => return usage_error(err, &e, Some(name)),
    };
    let record = json!({
        "command": name,
        "config_sha256": config_hash(&args),
        "seed": outcome.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "passed": outcome.passed,
        "summary": outcome.summary,
    });
    if let Err(e) = append_log(&common.log, &record) {
        let _ = writeln!(err, "error: cannot append to run log {}: {e}", common.log.display());
        return EXIT_USAGE;
    }
    if outcome.passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = Config::parse("# comment\ncoverage.trials = 10 # ten\ncommon.seed=7\n\ncoverage.beta_grid = 0, 1\n").unwrap();
        assert_eq!(c.get("coverage", "trials"), Some("10"));
        assert_eq!(c.get("common", "seed"), Some("7"));
        assert_eq!(c.get("coverage", "beta-grid"), Some("0, 1"));
        assert!(matches!(Config::parse("trials = 3"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("a.b = 1\na.b = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(Config::parse("no equals sign").is_err());
    }

    #[test]
    fn hash_ignores_output_paths() {
        let a: Vec<String> = ["pacbayes", "sweep", "--seed", "1", "--out", "a.csv"].map(String::from).to_vec();
        let b: Vec<String> = ["pacbayes", "sweep", "--seed", "1", "--out=b.csv"].map(String::from).to_vec();
        let c: Vec<String> = ["pacbayes", "sweep", "--seed", "2"].map(String::from).to_vec();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn number_format_has_seventeen_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
