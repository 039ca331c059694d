//! Finite data spaces with exact probabilities, loss tables, and samples.
//!
//! The data distribution is known and finite, so the true risk of any
//! hypothesis is an exact dot product rather than an estimate.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on `sum(probs) == 1` for distributions and measures.
pub const SIMPLEX_TOL: f64 = 1e-12;

pub(crate) fn validate_simplex(what: &str, weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid(format!("{what} must be nonempty")));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(Error::invalid(format!(
            "{what} entry {i} must be a nonnegative number, got {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!(
            "{what} must sum to 1 (within {SIMPLEX_TOL:e}), got {total}"
        )));
    }
    Ok(())
}

pub(crate) fn normalize(what: &str, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(format!("{what} entries must be nonnegative")));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::invalid(format!("{what} has zero total mass")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// A distribution over the finite example space `{0, .., point_count-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDistribution {
    probs: Vec<f64>,
}

impl DataDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_simplex("distribution", &probs)?;
        Ok(Self { probs })
    }

    /// Builds a distribution from nonnegative weights, rescaling them to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Self::new(normalize("distribution", weights)?)
    }

    pub fn uniform(point_count: usize) -> Result<Self> {
        if point_count == 0 {
            return Err(Error::invalid("point_count must be positive"));
        }
        Ok(Self {
            probs: vec![1.0 / point_count as f64; point_count],
        })
    }

    pub fn point_mass(point_count: usize, at: usize) -> Result<Self> {
        if at >= point_count {
            return Err(Error::invalid(format!(
                "point {at} out of range for {point_count} points"
            )));
        }
        let mut probs = vec![0.0; point_count];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn point_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// The loss class: a `hypothesis_count x point_count` matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    hypothesis_count: usize,
    point_count: usize,
    /// Row-major.
    loss: Vec<f64>,
    binary: bool,
}

impl LossTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let hypothesis_count = rows.len();
        if hypothesis_count == 0 {
            return Err(Error::invalid("loss table needs at least one hypothesis"));
        }
        let point_count = rows[0].len();
        if point_count == 0 {
            return Err(Error::invalid("loss table needs at least one point"));
        }
        let mut loss = Vec::with_capacity(hypothesis_count * point_count);
        for (f, row) in rows.into_iter().enumerate() {
            if row.len() != point_count {
                return Err(Error::invalid(format!(
                    "loss row {f} has {} entries, expected {point_count}",
                    row.len()
                )));
            }
            loss.extend(row);
        }
        Self::from_row_major(hypothesis_count, point_count, loss)
    }

    pub fn from_row_major(hypothesis_count: usize, point_count: usize, loss: Vec<f64>) -> Result<Self> {
        if hypothesis_count == 0 || point_count == 0 {
            return Err(Error::invalid("loss table dimensions must be positive"));
        }
        if loss.len() != hypothesis_count * point_count {
            return Err(Error::invalid(format!(
                "loss table has {} entries, expected {hypothesis_count} x {point_count}",
                loss.len()
            )));
        }
        if let Some(pos) = loss.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "loss[{}, {}] = {} is outside [0, 1]",
                pos / point_count,
                pos % point_count,
                loss[pos]
            )));
        }
        let binary = loss.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(Self {
            hypothesis_count,
            point_count,
            loss,
            binary,
        })
    }

    pub fn hypothesis_count(&self) -> usize {
        self.hypothesis_count
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// True iff every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.binary
    }

    #[inline]
    pub fn get(&self, f: usize, z: usize) -> f64 {
        self.loss[f * self.point_count + z]
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.loss[f * self.point_count..(f + 1) * self.point_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.loss.chunks_exact(self.point_count)
    }

    pub(crate) fn check_hypothesis(&self, f: usize) -> Result<()> {
        if f < self.hypothesis_count {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "hypothesis {f} out of range ({} hypotheses)",
                self.hypothesis_count
            )))
        }
    }

    pub(crate) fn check_point(&self, z: usize) -> Result<()> {
        if z < self.point_count {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "point {z} out of range ({} points)",
                self.point_count
            )))
        }
    }

    pub(crate) fn check_distribution(&self, dist: &DataDistribution) -> Result<()> {
        if dist.point_count() == self.point_count {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "distribution has {} points but loss table has {}",
                dist.point_count(),
                self.point_count
            )))
        }
    }

    pub(crate) fn check_sample(&self, s: &Sample) -> Result<()> {
        match s.indices.iter().find(|&&z| z >= self.point_count) {
            Some(z) => Err(Error::invalid(format!(
                "sample index {z} out of range ({} points)",
                self.point_count
            ))),
            None => Ok(()),
        }
    }
}

/// A training sample: indices into the example space, with multiplicity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    indices: Vec<usize>,
    seed: u64,
}

impl Sample {
    /// Wraps explicit indices; `seed` is recorded as-is.
    pub fn new(indices: Vec<usize>, seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("sample must contain at least one point"));
        }
        Ok(Self { indices, seed })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The seed this sample was drawn with.
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws `m` i.i.d. points from `dist`. Identical arguments give identical samples.
pub fn draw_sample(dist: &DataDistribution, m: usize, seed: u64) -> Result<Sample> {
    if m == 0 {
        return Err(Error::invalid("sample size m must be at least 1"));
    }
    let sampler = WeightedIndex::new(dist.probs()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(seed, 0);
    let indices = (0..m).map(|_| sampler.sample(&mut rng)).collect();
    Ok(Sample { indices, seed })
}

/// Exact risk `sum_z dist(z) * loss[f, z]`.
pub fn true_risk(table: &LossTable, f: usize, dist: &DataDistribution) -> Result<f64> {
    table.check_hypothesis(f)?;
    table.check_distribution(dist)?;
    Ok(dot(table.row(f), dist.probs()))
}

/// Mean loss of hypothesis `f` over the sample.
pub fn empirical_risk(table: &LossTable, f: usize, s: &Sample) -> Result<f64> {
    table.check_hypothesis(f)?;
    table.check_sample(s)?;
    Ok(empirical_row_mean(table.row(f), s))
}

pub(crate) fn empirical_row_mean(row: &[f64], s: &Sample) -> f64 {
    s.indices.iter().map(|&z| row[z]).sum::<f64>() / s.len() as f64
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-point occurrence counts of a sample. Sums over the sample can be
/// computed as count-weighted sums over distinct points.
pub(crate) fn point_counts(s: &Sample, point_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; point_count];
    for &z in s.indices() {
        counts[z] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> LossTable {
        LossTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn point_mass_sample_is_constant() {
        let dist = DataDistribution::point_mass(3, 0).unwrap();
        for seed in [0, 1, 99] {
            assert_eq!(draw_sample(&dist, 5, seed).unwrap().indices(), &[0, 0, 0, 0, 0]);
        }
    }

    #[test]
    fn uniform_frequency_within_three_sigma() {
        // 3 sigma of Binomial(1e5, 0.5) / 1e5 is ~0.0047; the contract allows 0.01.
        let dist = DataDistribution::uniform(2).unwrap();
        let s = draw_sample(&dist, 100_000, 1).unwrap();
        let zeros = s.indices().iter().filter(|&&z| z == 0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() <= 0.01, "frequency {zeros}");
    }

    #[test]
    fn same_seed_same_sample() {
        let dist = DataDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let a = draw_sample(&dist, 50, 42).unwrap();
        let b = draw_sample(&dist, 50, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed(), 42);
        assert_ne!(a, draw_sample(&dist, 50, 43).unwrap());
    }

    #[test]
    fn zero_sized_sample_rejected() {
        let dist = DataDistribution::uniform(2).unwrap();
        assert!(matches!(draw_sample(&dist, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn true_risk_examples() {
        let dist = DataDistribution::uniform(2).unwrap();
        let t = table(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(true_risk(&t, 0, &dist).unwrap(), 0.0);
        assert_eq!(true_risk(&t, 1, &dist).unwrap(), 0.5);
        let skew = DataDistribution::new(vec![0.3, 0.7]).unwrap();
        assert!((true_risk(&t, 1, &skew).unwrap() - 0.3).abs() < 1e-15);
        assert!(true_risk(&t, 2, &dist).is_err());
    }

    #[test]
    fn empirical_risk_examples() {
        let t = table(&[&[1.0, 1.0], &[1.0, 0.0]]);
        let s = Sample::new(vec![0, 0, 1, 1], 0).unwrap();
        assert_eq!(empirical_risk(&t, 0, &s).unwrap(), 1.0);
        assert_eq!(empirical_risk(&t, 1, &s).unwrap(), 0.5);
        let single = Sample::new(vec![1], 0).unwrap();
        assert_eq!(empirical_risk(&t, 1, &single).unwrap(), 0.0);
        assert!(empirical_risk(&t, 5, &s).is_err());
        let bad = Sample::new(vec![3], 0).unwrap();
        assert!(empirical_risk(&t, 0, &bad).is_err());
    }

    #[test]
    fn empirical_risk_converges_to_true_risk() {
        let dist = DataDistribution::new(vec![0.1, 0.25, 0.4, 0.25]).unwrap();
        let t = table(&[&[1.0, 0.0, 1.0, 0.0]]);
        let r = true_risk(&t, 0, &dist).unwrap();
        let m = 20;
        let trials = 10_000;
        let mean = (0..trials)
            .map(|i| {
                let s = draw_sample(&dist, m, rng::derive_seed(3, i)).unwrap();
                empirical_risk(&t, 0, &s).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        let var = r * (1.0 - r) / m as f64;
        assert!((mean - r).abs() <= 4.0 * (var / trials as f64).sqrt(), "{mean} vs {r}");
    }

    #[test]
    fn risks_scale_with_row() {
        let dist = DataDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let row = [1.0, 0.5, 0.25];
        let alpha = 0.5;
        let t = table(&[&row, &row.map(|v| v * alpha)]);
        let s = Sample::new(vec![0, 2, 2, 1], 0).unwrap();
        assert_eq!(
            true_risk(&t, 1, &dist).unwrap(),
            alpha * true_risk(&t, 0, &dist).unwrap()
        );
        assert_eq!(
            empirical_risk(&t, 1, &s).unwrap(),
            alpha * empirical_risk(&t, 0, &s).unwrap()
        );
    }

    #[test]
    fn table_validation() {
        assert!(LossTable::new(vec![vec![0.0, 1.5]]).is_err());
        assert!(LossTable::new(vec![vec![0.0, 1.0], vec![1.0]]).is_err());
        assert!(table(&[&[0.0, 1.0]]).is_binary());
        assert!(!table(&[&[0.0, 0.5]]).is_binary());
        assert!(DataDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DataDistribution::new(vec![1.5, -0.5]).is_err());
    }
}
