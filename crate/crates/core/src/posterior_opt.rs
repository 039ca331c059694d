//! Posteriors chosen to make a bound small: the tempered Gibbs family and an
//! exponentiated-gradient search on the simplex.
//!
//! Objectives are nonconvex for the flatness family, so [`minimize_bound`]
//! promises only the best posterior it found.

use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundFamily, BoundParams, BoundReport};
use crate::error::{Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::model::{self, LossTable, Sample};

/// `q(f) ∝ p(f) exp(-beta m R_S(f))`.
pub fn gibbs_posterior(p: &ProbMeasure, table: &LossTable, s: &Sample, beta: f64) -> Result<ProbMeasure> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be nonnegative and finite, got {beta}")));
    }
    p.check_table(table)?;
    if beta == 0.0 {
        return Ok(p.clone());
    }
    let emp = gibbs::empirical_risks(table, s)?;
    let scale = beta * s.len() as f64;
    // Shifting by the best risk on the support keeps its atoms at their prior weight.
    let best = p
        .weights()
        .iter()
        .zip(&emp)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min);
    let weights = p
        .weights()
        .iter()
        .zip(&emp)
        .map(|(&w, &r)| if w > 0.0 { w * (-scale * (r - best)).exp() } else { 0.0 })
        .collect();
    Ok(ProbMeasure::from_raw_normalized(weights))
}

fn softmax(logits: &[f64]) -> ProbMeasure {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ProbMeasure::from_raw_normalized(logits.iter().map(|l| (l - top).exp()).collect())
}

/// Gradient of the bound value with respect to the posterior weights.
///
/// Entries outside the support of `q` are zero. Every family depends on `q`
/// through the empirical Gibbs risk (gradient `R_S(f)`) and the KL
/// (gradient `ln(q_f/p_f) + 1`); the flatness family adds
///
/// ```text
/// c * [ (1/m) sum_i f(z_i)^2 - 2 (1-h^2) (1/m) sum_i G_Q(z_i) f(z_i) ]
/// ```
///
/// which under zero-one loss is the gradient of the alternate form
/// `L_S(Q) - (1-h^2)/m sum_i G_Q(z_i)^2`.
pub fn bound_gradient(
    family: BoundFamily,
    params: &BoundParams,
    q: &ProbMeasure,
    p: &ProbMeasure,
    table: &LossTable,
    s: &Sample,
) -> Result<Vec<f64>> {
    params.validate(family)?;
    let inputs = bounds::posterior_inputs(family, params, q, p, table, s)?;
    if !inputs.kl.is_finite() {
        return Err(Error::invalid("posterior is not absolutely continuous with respect to the prior"));
    }
    let m = s.len() as f64;
    let delta = params.delta;
    let (d_emp, d_kl) = match family {
        BoundFamily::McAllester => {
            let u = (inputs.kl + (m / delta).ln()) / (2.0 * (m - 1.0));
            (1.0, 1.0 / (4.0 * (m - 1.0) * u.sqrt()))
        }
        BoundFamily::Catoni => {
            let pref = bounds::catoni_prefactor(params.catoni_c);
            (pref, pref / (params.catoni_c * m))
        }
        BoundFamily::Kst => {
            let d = if inputs.kl > 2.0 { 4.5 / (2.0 * (inputs.kl * m).sqrt()) } else { 0.0 };
            (1.0, d)
        }
        BoundFamily::MatchedCatoni => {
            let k = bounds::derive_matched_catoni_constants(params.c, params.matched_c2(), delta)?;
            (1.0 + params.c, k.c1 / m)
        }
        BoundFamily::Flatness => (1.0, 12.0 / (bounds::flatness_rate_constant(params.c, params.h) * m)),
    };

    let emp = gibbs::empirical_risks(table, s)?;
    let mut grad: Vec<f64> = q
        .weights()
        .iter()
        .zip(p.weights())
        .zip(&emp)
        .map(|((&qf, &pf), &r)| {
            if qf > 0.0 {
                d_emp * r + d_kl * ((qf / pf).ln() + 1.0)
            } else {
                0.0
            }
        })
        .collect();

    if family == BoundFamily::Flatness {
        let shrink = 1.0 - params.h * params.h;
        let counts = model::point_counts(s, table.point_count());
        for (z, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let g = gibbs::gibbs_loss_unchecked(q, table, z);
            let weight = params.c * n as f64 / m;
            for (f, slot) in grad.iter_mut().enumerate() {
                if q.weights()[f] > 0.0 {
                    let l = table.get(f, z);
                    *slot += weight * (l * l - 2.0 * shrink * g * l);
                }
            }
        }
    }
    Ok(grad)
}

/// Result of [`minimize_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimized {
    pub posterior: ProbMeasure,
    pub report: BoundReport,
    /// Grid temperature of the starting point of the refinement.
    pub beta: f64,
    /// Number of accepted refinement steps.
    pub accepted_steps: usize,
}

fn lexicographic(a: &ProbMeasure, b: &ProbMeasure) -> std::cmp::Ordering {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Best posterior found for `family`: the Gibbs posteriors on `beta_grid`,
/// followed by `refine_steps` exponentiated-gradient steps from the best of
/// them. A step is kept only if it lowers the bound; otherwise the step size
/// is halved.
pub fn minimize_bound(
    family: BoundFamily,
    params: &BoundParams,
    p: &ProbMeasure,
    table: &LossTable,
    s: &Sample,
    beta_grid: &[f64],
    refine_steps: usize,
) -> Result<Minimized> {
    if beta_grid.is_empty() {
        return Err(Error::invalid("beta grid must be nonempty"));
    }
    params.validate(family)?;
    let evaluate = |q: &ProbMeasure| bounds::evaluate_posterior(family, params, q, p, table, s);

    let mut best: Option<(f64, ProbMeasure, BoundReport)> = None;
    for &beta in beta_grid {
        let q = gibbs_posterior(p, table, s, beta)?;
        let report = evaluate(&q)?;
        let better = match &best {
            None => true,
            Some((b_beta, b_q, b_report)) => match report.value.total_cmp(&b_report.value) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => match beta.total_cmp(b_beta) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => lexicographic(&q, b_q).is_lt(),
                },
            },
        };
        if better {
            best = Some((beta, q, report));
        }
    }
    let (beta, mut q, mut report) = best.expect("nonempty grid");

    let mut accepted = 0;
    if refine_steps > 0 && report.value.is_finite() {
        let mut step = None;
        for _ in 0..refine_steps {
            let grad = bound_gradient(family, params, &q, p, table, s)?;
            let mean = q.expect(&grad);
            let centered: Vec<f64> = grad.iter().map(|g| g - mean).collect();
            let spread = q
                .weights()
                .iter()
                .zip(&centered)
                .filter(|(w, _)| **w > 0.0)
                .map(|(_, g)| g.abs())
                .fold(0.0, f64::max);
            if spread == 0.0 {
                break;
            }
            let eta = *step.get_or_insert(1.0 / spread);
            let logits: Vec<f64> = q
                .weights()
                .iter()
                .zip(&centered)
                .map(|(&w, &g)| if w > 0.0 { w.ln() - eta * g } else { f64::NEG_INFINITY })
                .collect();
            let candidate = softmax(&logits);
            let cand_report = evaluate(&candidate)?;
            if cand_report.value < report.value {
                q = candidate;
                report = cand_report;
                accepted += 1;
            } else {
                step = Some(eta / 2.0);
            }
        }
    }
    Ok(Minimized {
        posterior: q,
        report,
        beta,
        accepted_steps: accepted,
    })
}
