//! Gibbs classifiers: probability measures over the loss class, KL
//! divergence, Gibbs losses and risks, and h-flatness.
//!
//! For a measure `Q` the Gibbs loss at a point is `G_Q(z) = E_{f~Q} f(z)`.
//! The h-flatness of `Q` on a sample is
//!
//! ```text
//! (1/m) sum_i E_Q [f(z_i) - (1+h) G_Q(z_i)]^2
//! ```
//!
//! which under zero-one loss equals `L_S(Q) - (1-h^2)/m sum_i G_Q(z_i)^2`.
//! For general `[0,1]` losses the right-hand side is only an upper bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, DataDistribution, LossTable, Sample};

/// A probability vector over the hypotheses of a loss table (prior or posterior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMeasure {
    weights: Vec<f64>,
}

impl ProbMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        model::validate_simplex("measure", &weights)?;
        Ok(Self { weights })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Self::new(model::normalize("measure", weights)?)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("measure must have at least one atom"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::invalid(format!("atom {at} out of range for {n} atoms")));
        }
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Expectation of `values` under this measure.
    pub fn expect(&self, values: &[f64]) -> f64 {
        model::dot(&self.weights, values)
    }

    /// Mixture `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &ProbMeasure, alpha: f64) -> Result<ProbMeasure> {
        check_same_len(self, other)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("mixture weight {alpha} outside [0, 1]")));
        }
        ProbMeasure::from_weights(
            &self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect::<Vec<_>>(),
        )
    }

    pub(crate) fn check_table(&self, table: &LossTable) -> Result<()> {
        if self.len() == table.hypothesis_count() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "measure has {} atoms but loss table has {} hypotheses",
                self.len(),
                table.hypothesis_count()
            )))
        }
    }

    /// Internal constructor for weights already known to be on the simplex up to rounding.
    pub(crate) fn from_raw_normalized(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { weights }
    }
}

fn check_same_len(q: &ProbMeasure, p: &ProbMeasure) -> Result<()> {
    if q.len() == p.len() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "measures have different lengths ({} vs {})",
            q.len(),
            p.len()
        )))
    }
}

/// `KL(q || p) = sum_i q_i ln(q_i / p_i)` with `0 ln 0 = 0`.
///
/// Returns `f64::INFINITY` when `q` puts mass where `p` has none; downstream
/// bounds then evaluate to the vacuous value `+inf`.
pub fn kl_divergence(q: &ProbMeasure, p: &ProbMeasure) -> Result<f64> {
    check_same_len(q, p)?;
    let mut total = 0.0;
    for (&qi, &pi) in q.weights.iter().zip(&p.weights) {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += qi * (qi / pi).ln();
    }
    Ok(total.max(0.0))
}

/// Gibbs loss `G_Q(z) = sum_f q_f loss[f, z]`.
pub fn gibbs_loss(q: &ProbMeasure, table: &LossTable, z: usize) -> Result<f64> {
    q.check_table(table)?;
    table.check_point(z)?;
    Ok(gibbs_loss_unchecked(q, table, z))
}

#[inline]
pub(crate) fn gibbs_loss_unchecked(q: &ProbMeasure, table: &LossTable, z: usize) -> f64 {
    q.weights
        .iter()
        .enumerate()
        .map(|(f, w)| w * table.get(f, z))
        .sum()
}

/// Gibbs losses at every point of the example space.
pub fn gibbs_loss_vector(q: &ProbMeasure, table: &LossTable) -> Result<Vec<f64>> {
    q.check_table(table)?;
    Ok((0..table.point_count())
        .map(|z| gibbs_loss_unchecked(q, table, z))
        .collect())
}

/// Exact Gibbs risk `L_D(Q) = E_{f~Q} R(f)`.
pub fn gibbs_risk(q: &ProbMeasure, table: &LossTable, dist: &DataDistribution) -> Result<f64> {
    q.check_table(table)?;
    table.check_distribution(dist)?;
    let risks: Vec<f64> = table.rows().map(|row| model::dot(row, dist.probs())).collect();
    Ok(q.expect(&risks))
}

/// Empirical Gibbs risk `L_S(Q) = (1/m) sum_i G_Q(z_i)`.
pub fn gibbs_empirical_risk(q: &ProbMeasure, table: &LossTable, s: &Sample) -> Result<f64> {
    q.check_table(table)?;
    table.check_sample(s)?;
    let risks: Vec<f64> = table
        .rows()
        .map(|row| model::empirical_row_mean(row, s))
        .collect();
    Ok(q.expect(&risks))
}

/// Per-hypothesis empirical risks on a sample.
pub fn empirical_risks(table: &LossTable, s: &Sample) -> Result<Vec<f64>> {
    table.check_sample(s)?;
    Ok(table
        .rows()
        .map(|row| model::empirical_row_mean(row, s))
        .collect())
}

/// Per-hypothesis true risks.
pub fn true_risks(table: &LossTable, dist: &DataDistribution) -> Result<Vec<f64>> {
    table.check_distribution(dist)?;
    Ok(table.rows().map(|row| model::dot(row, dist.probs())).collect())
}

/// The h-flatness of a posterior on a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessValue {
    pub h: f64,
    pub value: f64,
}

fn check_h(h: f64, closed_at_zero: bool) -> Result<()> {
    let ok = if closed_at_zero {
        (0.0..=1.0).contains(&h)
    } else {
        h > 0.0 && h <= 1.0
    };
    if ok {
        Ok(())
    } else {
        let range = if closed_at_zero { "[0, 1]" } else { "(0, 1]" };
        Err(Error::invalid(format!("h must lie in {range}, got {h}")))
    }
}

/// h-flatness by the definitional double sum, valid for any `[0,1]` loss.
pub fn flatness(q: &ProbMeasure, table: &LossTable, s: &Sample, h: f64) -> Result<FlatnessValue> {
    check_h(h, false)?;
    q.check_table(table)?;
    table.check_sample(s)?;
    Ok(FlatnessValue {
        h,
        value: flatness_sum(q, table, s, h),
    })
}

/// Same double sum without argument checks; `h` may be 0 here.
pub(crate) fn flatness_sum(q: &ProbMeasure, table: &LossTable, s: &Sample, h: f64) -> f64 {
    let counts = model::point_counts(s, table.point_count());
    let mut total = 0.0;
    for (z, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let g = gibbs_loss_unchecked(q, table, z);
        let shifted = (1.0 + h) * g;
        let inner: f64 = q
            .weights
            .iter()
            .enumerate()
            .map(|(f, w)| {
                let d = table.get(f, z) - shifted;
                w * d * d
            })
            .sum();
        total += n as f64 * inner;
    }
    (total / s.len() as f64).max(0.0)
}

/// `L_S(Q) - (1-h^2)/m sum_i G_Q(z_i)^2`.
///
/// Equals [`flatness`] under zero-one loss and bounds it from above otherwise.
pub fn flatness_alternate(q: &ProbMeasure, table: &LossTable, s: &Sample, h: f64) -> Result<f64> {
    check_h(h, true)?;
    q.check_table(table)?;
    table.check_sample(s)?;
    let emp = gibbs_empirical_risk(q, table, s)?;
    let (_, mean_sq) = gibbs_loss_moments(q, table, s);
    Ok(emp - (1.0 - h * h) * mean_sq)
}

/// `(L_S(Q), (1/m) sum_i G_Q(z_i)^2)`.
pub(crate) fn gibbs_loss_moments(q: &ProbMeasure, table: &LossTable, s: &Sample) -> (f64, f64) {
    let counts = model::point_counts(s, table.point_count());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (z, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let g = gibbs_loss_unchecked(q, table, z);
        sum += n as f64 * g;
        sum_sq += n as f64 * g * g;
    }
    let m = s.len() as f64;
    (sum / m, sum_sq / m)
}
