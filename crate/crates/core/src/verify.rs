//! Coverage experiments: how often does a bound fail over repeated draws of
//! the training sample?
//!
//! The posterior is chosen after seeing each sample, which is legitimate
//! because every bound holds uniformly over posteriors. Violations are
//! judged against the exact Gibbs risk under the known data distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::bounds::{self, BoundFamily, BoundParams};
use crate::error::{check_open, Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::model::{self, DataDistribution, LossTable, Sample};
use crate::posterior_opt;
use crate::rng;

/// How each trial picks its posterior from the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorRule {
    /// Ignore the sample.
    Fixed(ProbMeasure),
    /// `q ∝ p exp(-beta m R_S)`.
    GibbsPosterior { beta: f64 },
    /// [`posterior_opt::minimize_bound`] against the family under test.
    BoundMinimizer { beta_grid: Vec<f64>, refine_steps: usize },
}

/// Parameters available to [`PosteriorRule::from_id`].
#[derive(Debug, Clone, PartialEq)]
pub struct RuleOptions {
    pub beta: f64,
    pub beta_grid: Vec<f64>,
    pub refine_steps: usize,
    pub fixed: Option<ProbMeasure>,
}

impl Default for RuleOptions {
    fn default() -> Self {
        Self {
            beta: 1.0,
            beta_grid: vec![0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            refine_steps: 20,
            fixed: None,
        }
    }
}

impl PosteriorRule {
    /// Rule ids: `fixed`, `gibbs-posterior` (alias `gibbs`), `bound-minimizer`
    /// (alias `minimizer`).
    pub fn from_id(id: &str, options: &RuleOptions) -> Result<Self> {
        match id.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fixed" | "fixed-q" => options
                .fixed
                .clone()
                .map(PosteriorRule::Fixed)
                .ok_or_else(|| Error::invalid("the fixed rule needs a posterior")),
            "gibbs" | "gibbs-posterior" => {
                if !(options.beta >= 0.0 && options.beta.is_finite()) {
                    return Err(Error::invalid(format!("beta must be nonnegative, got {}", options.beta)));
                }
                Ok(PosteriorRule::GibbsPosterior { beta: options.beta })
            }
            "minimizer" | "bound-minimizer" => {
                if options.beta_grid.is_empty() {
                    return Err(Error::invalid("beta grid must be nonempty"));
                }
                Ok(PosteriorRule::BoundMinimizer {
                    beta_grid: options.beta_grid.clone(),
                    refine_steps: options.refine_steps,
                })
            }
            other => Err(Error::invalid(format!("unknown posterior rule '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            PosteriorRule::Fixed(_) => "fixed",
            PosteriorRule::GibbsPosterior { .. } => "gibbs-posterior",
            PosteriorRule::BoundMinimizer { .. } => "bound-minimizer",
        }
    }

    pub fn apply(
        &self,
        family: BoundFamily,
        params: &BoundParams,
        prior: &ProbMeasure,
        table: &LossTable,
        s: &Sample,
    ) -> Result<ProbMeasure> {
        match self {
            PosteriorRule::Fixed(q) => {
                q.check_table(table)?;
                Ok(q.clone())
            }
            PosteriorRule::GibbsPosterior { beta } => posterior_opt::gibbs_posterior(prior, table, s, *beta),
            PosteriorRule::BoundMinimizer { beta_grid, refine_steps } => Ok(posterior_opt::minimize_bound(
                family,
                params,
                prior,
                table,
                s,
                beta_grid,
                *refine_steps,
            )?
            .posterior),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub family: BoundFamily,
    pub trials: u64,
    pub violations: u64,
    pub violation_rate: f64,
    /// One-sided 95% Clopper–Pearson upper limit on the violation rate.
    pub clopper_pearson_upper: f64,
    /// Mean of `bound - true Gibbs risk`.
    pub mean_slack: f64,
    pub min_slack: f64,
}

/// Settings shared by all families of one coverage run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub params: BoundParams,
    pub m: usize,
    pub trials: u64,
    pub seed: u64,
}

/// Coverage of one family.
pub fn coverage_experiment(
    table: &LossTable,
    dist: &DataDistribution,
    prior: &ProbMeasure,
    rule: &PosteriorRule,
    family: BoundFamily,
    config: &CoverageConfig,
) -> Result<CoverageReport> {
    Ok(coverage_experiments(table, dist, prior, rule, &[family], config)?.remove(0))
}

/// Coverage of several families on the same sequence of samples.
pub fn coverage_experiments(
    table: &LossTable,
    dist: &DataDistribution,
    prior: &ProbMeasure,
    rule: &PosteriorRule,
    families: &[BoundFamily],
    config: &CoverageConfig,
) -> Result<Vec<CoverageReport>> {
    if config.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if families.is_empty() {
        return Err(Error::invalid("no bound families requested"));
    }
    table.check_distribution(dist)?;
    prior.check_table(table)?;
    for &family in families {
        config.params.validate(family)?;
    }

    // slacks[trial][family]
    let slacks = (0..config.trials)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let s = model::draw_sample(dist, config.m, rng::derive_seed(config.seed, i))?;
            families
                .iter()
                .map(|&family| {
                    let q = rule.apply(family, &config.params, prior, table, &s)?;
                    let bound = bounds::evaluate_posterior(family, &config.params, &q, prior, table, &s)?;
                    let risk = gibbs::gibbs_risk(&q, table, dist)?;
                    Ok(bound.value - risk)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    families
        .iter()
        .enumerate()
        .map(|(k, &family)| {
            let mut violations = 0u64;
            let mut total = 0.0;
            let mut min_slack = f64::INFINITY;
            for row in &slacks {
                let slack = row[k];
                if slack < 0.0 {
                    violations += 1;
                }
                total += slack;
                min_slack = min_slack.min(slack);
            }
            Ok(CoverageReport {
                family,
                trials: config.trials,
                violations,
                violation_rate: violations as f64 / config.trials as f64,
                clopper_pearson_upper: clopper_pearson_upper(violations, config.trials, 0.95)?,
                mean_slack: total / config.trials as f64,
                min_slack,
            })
        })
        .collect()
}

/// Exact one-sided upper confidence limit for a binomial proportion: the `p`
/// solving `P(Bin(n, p) <= k) = 1 - confidence`, i.e. the `confidence`
/// quantile of `Beta(k + 1, n - k)`.
pub fn clopper_pearson_upper(violations: u64, trials: u64, confidence: f64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if violations > trials {
        return Err(Error::invalid(format!("violations {violations} exceed trials {trials}")));
    }
    check_open("confidence", confidence, 0.0, 1.0)?;
    if violations == trials {
        return Ok(1.0);
    }
    let a = violations as f64 + 1.0;
    let b = (trials - violations) as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
