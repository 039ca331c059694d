//! When does the flatness bound beat Catoni's bound?
//!
//! Both bounds inflate the empirical risk by the same factor `1 + c`: Catoni's
//! `C` is chosen with `C/(1-e^{-C}) = 1 + c`. Under that alignment Catoni's
//! bound reads `(1+c) L_S + C_c/m (KL + ln 1/delta)` with `C_c = 1/(1-e^{-C})`,
//! while the flatness bound trades part of the inflation for
//! `T_m = c (1-h^2)/m sum_i G_Q(z_i)^2` at the price of a larger rate constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundFamily, BoundParams};
use crate::error::{check_open, check_positive, Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::model::{self, DataDistribution, LossTable};
use crate::rng;
use crate::verify::PosteriorRule;

/// Sample size beyond which the schematic flatness bound
/// `(1+c) L_S - T_m + C_r/m (KL + ln 1/delta + 1)` undercuts
/// `(1+c) L_S + C_c/m (KL + ln 1/delta)`:
///
/// ```text
/// ((C_r - C_c)(KL + ln 1/delta) + C_r) / T_m
/// ```
pub fn crossover_threshold(t_m: f64, c_r: f64, c_c: f64, kl: f64, delta: f64) -> Result<f64> {
    check_positive("T_m", t_m)?;
    check_open("delta", delta, 0.0, 1.0)?;
    Ok(((c_r - c_c) * (kl + (1.0 / delta).ln()) + c_r) / t_m)
}

/// Constants of the two families at a shared inflation `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedConstants {
    pub c: f64,
    pub h: f64,
    /// Catoni's `C` with `C/(1-e^{-C}) = 1 + c`.
    pub catoni_c: f64,
    /// `C_c = 1/(1-e^{-C})`.
    pub catoni_rate: f64,
    /// `C = 2 h^4 c/(1 + 16 h^2 c)` of the flatness bound.
    pub flatness_rate_constant: f64,
    /// `C_r = 4/C`, the multiplier of `ln(1/delta)` in the flatness bound.
    pub flatness_rate: f64,
}

pub fn aligned_constants(c: f64, h: f64) -> Result<AlignedConstants> {
    check_positive("c", c)?;
    check_open("h", h, 0.0, 1.0)?;
    let catoni_c = bounds::catoni_c_for_inflation(c)?;
    let rate_constant = bounds::flatness_rate_constant(c, h);
    Ok(AlignedConstants {
        c,
        h,
        catoni_c,
        catoni_rate: 1.0 / -(-catoni_c).exp_m1(),
        flatness_rate_constant: rate_constant,
        flatness_rate: 4.0 / rate_constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub c: f64,
    pub h: f64,
    pub delta: f64,
    /// Strictly increasing sample sizes.
    pub m_grid: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub catoni_mean: f64,
    pub flatness_mean: f64,
    pub t_m_mean: f64,
    pub kl_mean: f64,
    /// Flatness bound strictly below the aligned Catoni bound on average.
    pub crossover_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub constants: AlignedConstants,
    pub delta: f64,
    pub rows: Vec<SweepRow>,
    /// First grid size with the crossover flag set; `None` when there is none.
    pub crossover_m: Option<usize>,
}

impl SweepTable {
    /// `T_m` averaged over all rows.
    pub fn mean_t_m(&self) -> f64 {
        self.rows.iter().map(|r| r.t_m_mean).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_kl(&self) -> f64 {
        self.rows.iter().map(|r| r.kl_mean).sum::<f64>() / self.rows.len() as f64
    }

    /// [`crossover_threshold`] at the sweep's mean `T_m` and KL.
    pub fn schematic_threshold(&self) -> Result<f64> {
        crossover_threshold(
            self.mean_t_m(),
            self.constants.flatness_rate,
            self.constants.catoni_rate,
            self.mean_kl(),
            self.delta,
        )
    }
}

struct TrialValues {
    catoni: f64,
    flatness: f64,
    t_m: f64,
    kl: f64,
}

/// Both bounds, averaged over `trials` samples at each grid size. The
/// posterior rule sees the flatness family; each trial evaluates both bounds
/// on the same sample and posterior.
pub fn bound_sweep(
    table: &LossTable,
    dist: &DataDistribution,
    prior: &ProbMeasure,
    rule: &PosteriorRule,
    config: &SweepConfig,
) -> Result<SweepTable> {
    if config.m_grid.is_empty() {
        return Err(Error::invalid("m grid must be nonempty"));
    }
    if config.m_grid[0] == 0 || config.m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("m grid must be positive and strictly increasing"));
    }
    if config.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let constants = aligned_constants(config.c, config.h)?;
    let params = BoundParams {
        delta: config.delta,
        catoni_c: constants.catoni_c,
        c: config.c,
        c2: None,
        h: config.h,
    };
    params.validate(BoundFamily::Flatness)?;
    table.check_distribution(dist)?;
    prior.check_table(table)?;

    let trials = config.trials;
    let jobs: Vec<(usize, u64)> = (0..config.m_grid.len())
        .flat_map(|row| (0..trials).map(move |i| (row, i)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(row, i)| -> Result<TrialValues> {
            let m = config.m_grid[row];
            let seed = rng::derive_seed(rng::derive_seed(config.seed, row as u64), i);
            let s = model::draw_sample(dist, m, seed)?;
            let q = rule.apply(BoundFamily::Flatness, &params, prior, table, &s)?;
            let emp = gibbs::gibbs_empirical_risk(&q, table, &s)?.clamp(0.0, 1.0);
            let kl = gibbs::kl_divergence(&q, prior)?;
            let flat = gibbs::flatness(&q, table, &s, config.h)?.value;
            let (_, mean_sq) = gibbs::gibbs_loss_moments(&q, table, &s);
            Ok(TrialValues {
                catoni: bounds::catoni_bound(emp, kl, m, config.delta, constants.catoni_c)?,
                flatness: bounds::flatness_report(emp, flat, kl, m, config.delta, config.c, config.h)?.value,
                t_m: config.c * (1.0 - config.h * config.h) * mean_sq,
                kl,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = trials as f64;
    let rows: Vec<SweepRow> = values
        .chunks(trials as usize)
        .zip(&config.m_grid)
        .map(|(chunk, &m)| {
            let mut sums = [0.0; 4];
            for v in chunk {
                sums[0] += v.catoni;
                sums[1] += v.flatness;
                sums[2] += v.t_m;
                sums[3] += v.kl;
            }
            let catoni_mean = sums[0] / n;
            let flatness_mean = sums[1] / n;
            SweepRow {
                m,
                catoni_mean,
                flatness_mean,
                t_m_mean: sums[2] / n,
                kl_mean: sums[3] / n,
                crossover_flag: flatness_mean < catoni_mean,
            }
        })
        .collect();
    let crossover_m = rows.iter().find(|r| r.crossover_flag).map(|r| r.m);
    Ok(SweepTable {
        constants,
        delta: config.delta,
        rows,
        crossover_m,
    })
}

/// Geometric grid from `start` to at least `end`, each step multiplying by `ratio`.
pub fn geometric_grid(start: usize, end: usize, ratio: f64) -> Result<Vec<usize>> {
    if start == 0 || end < start || ratio.is_nan() || ratio <= 1.0 {
        return Err(Error::invalid("need 0 < start <= end and ratio > 1"));
    }
    let mut grid = vec![start];
    let mut x = start as f64;
    while *grid.last().expect("nonempty") < end {
        x *= ratio;
        let next = (x.round() as usize).max(grid.last().expect("nonempty") + 1);
        grid.push(next.min(end));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        // (C_r - C_c) = 100, KL + ln(1/delta) = 5, C_r = 160.
        let delta = 0.05f64;
        let kl = 5.0 - (1.0 / delta).ln();
        let v = crossover_threshold(0.05, 160.0, 60.0, kl, delta).unwrap();
        assert!((v - 13_200.0).abs() < 1e-9);
        assert_eq!(crossover_threshold(0.1, 7.0, 7.0, 3.0, delta).unwrap(), 70.0);
        let a = crossover_threshold(0.01, 50.0, 2.0, 1.0, delta).unwrap();
        let b = crossover_threshold(0.05, 50.0, 2.0, 1.0, delta).unwrap();
        let c = crossover_threshold(0.1, 50.0, 2.0, 1.0, delta).unwrap();
        assert!(a > b && b > c);
        assert!(crossover_threshold(0.0, 1.0, 1.0, 1.0, delta).is_err());
        assert!(crossover_threshold(-1.0, 1.0, 1.0, 1.0, delta).is_err());
    }

    #[test]
    fn aligned_catoni_matches_inflation() {
        let k = aligned_constants(1.0, 0.5).unwrap();
        assert!((bounds::catoni_prefactor(k.catoni_c) - 2.0).abs() < 1e-12);
        // Frozen high-precision reference for 1/(1-e^{-C}) at c = 1.
        assert!((k.catoni_rate - 1.255_000_974_915_975_3).abs() < 1e-12);
    }

    #[test]
    fn geometric_grid_shape() {
        let g = geometric_grid(10, 1000, 1.5).unwrap();
        assert_eq!(g[0], 10);
        assert_eq!(*g.last().unwrap(), 1000);
        assert!(g.windows(2).all(|w| w[1] > w[0] && (w[1] as f64) <= 1.5 * w[0] as f64 + 1.0));
    }

    #[test]
    fn completely_flat_zero_risk_posterior() {
        let table = LossTable::new(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap();
        let dist = DataDistribution::uniform(3).unwrap();
        let prior = ProbMeasure::uniform(2).unwrap();
        let rule = PosteriorRule::Fixed(ProbMeasure::point_mass(2, 0).unwrap());
        let config = SweepConfig {
            c: 1.0,
            h: 0.5,
            delta: 0.05,
            m_grid: vec![10, 100, 1000],
            trials: 5,
            seed: 3,
        };
        let sweep = bound_sweep(&table, &dist, &prior, &rule, &config).unwrap();
        let k = sweep.constants;
        for row in &sweep.rows {
            assert_eq!(row.t_m_mean, 0.0);
            // Only the rate terms remain, and the flatness rate is the larger one.
            let kl = 2f64.ln();
            let cat = k.catoni_rate * (kl + 20f64.ln()) / row.m as f64;
            let flat = k.flatness_rate * (3.0 * kl + 20f64.ln() + 5.0) / row.m as f64;
            assert!((row.catoni_mean - cat).abs() < 1e-12);
            assert!((row.flatness_mean - flat).abs() < 1e-12);
        }
        assert_eq!(sweep.crossover_m, None);
    }

    #[test]
    fn sweep_validation_and_determinism() {
        let table = LossTable::new(vec![vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        let dist = DataDistribution::new(vec![0.3, 0.3, 0.35, 0.05]).unwrap();
        let prior = ProbMeasure::new(vec![0.8, 0.2]).unwrap();
        let rule = PosteriorRule::Fixed(ProbMeasure::new(vec![0.95, 0.05]).unwrap());
        let mut config = SweepConfig {
            c: 1.0,
            h: 0.9,
            delta: 0.05,
            m_grid: vec![],
            trials: 4,
            seed: 8,
        };
        assert!(bound_sweep(&table, &dist, &prior, &rule, &config).is_err());
        config.m_grid = vec![20, 10];
        assert!(bound_sweep(&table, &dist, &prior, &rule, &config).is_err());
        config.m_grid = vec![50];
        let a = bound_sweep(&table, &dist, &prior, &rule, &config).unwrap();
        assert_eq!(a.crossover_m, None);
        assert!(a.rows[0].t_m_mean > 0.0);
        assert_eq!(a, bound_sweep(&table, &dist, &prior, &rule, &config).unwrap());
    }
}
