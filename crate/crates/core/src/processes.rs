//! Numerical checks of the shifted-Rademacher machinery behind the fast-rate
//! bounds: the KL-ball supremum and its Legendre dual, the two moment
//! generating function inequalities, and Monte-Carlo estimates of the
//! symmetrization-in-deviation tail inequalities.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::log_cosh;
use crate::error::{check_open, check_positive, Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::model::{self, DataDistribution, LossTable};
use crate::rng;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Largest `m` accepted by [`xy_mgf_bruteforce`] (`4^m` products).
pub const XY_MAX_M: usize = 12;

/// Rademacher multipliers with a shift and a scale.
///
/// `shifted(e) = e - shift_k` and `scaled(e) = a e - b` where
/// `(a, b) = scale_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedRademacherSpec {
    pub m: usize,
    pub shift_k: f64,
    pub scale_shift: (f64, f64),
}

impl ShiftedRademacherSpec {
    pub fn new(m: usize, shift_k: f64, scale_shift: (f64, f64)) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        Ok(Self {
            m,
            shift_k,
            scale_shift,
        })
    }

    /// Multipliers of the matched-Catoni symmetrization: shift `c'/(2+c')`
    /// with `c' = (c-c2)/(1+c2)`.
    pub fn matched_catoni(m: usize, c: f64, c2: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_open("c2", c2, 0.0, c)?;
        let cp = (c - c2) / (1.0 + c2);
        Self::new(m, cp / (2.0 + cp), (0.0, 0.0))
    }

    /// Multipliers of the flatness symmetrization: `e'' = e (c+c2)/2 - (c-c2)/2`.
    pub fn flatness(m: usize, c: f64, c2: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_open("c2", c2, 0.0, c)?;
        Self::new(m, 0.0, ((c + c2) / 2.0, (c - c2) / 2.0))
    }

    pub fn shifted(&self, eps: f64) -> f64 {
        eps - self.shift_k
    }

    pub fn scaled(&self, eps: f64) -> f64 {
        self.scale_shift.0 * eps - self.scale_shift.1
    }

    /// `m` i.i.d. signs.
    pub fn draw_signs<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.m)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Monte-Carlo frequency with a 95% Wilson score half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub probability: f64,
    pub hits: u64,
    pub trials: u64,
    pub wilson_halfwidth: f64,
}

impl TailEstimate {
    pub fn from_counts(hits: u64, trials: u64) -> Self {
        Self {
            probability: hits as f64 / trials as f64,
            hits,
            trials,
            wilson_halfwidth: wilson_halfwidth(hits, trials, Z_95),
        }
    }
}

/// Half-width of the Wilson score interval for `hits` out of `trials`.
pub fn wilson_halfwidth(hits: u64, trials: u64, z: f64) -> f64 {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

fn check_values(p: &ProbMeasure, values: &[f64]) -> Result<()> {
    if values.len() != p.len() {
        return Err(Error::invalid(format!(
            "values have length {} but measure has {}",
            values.len(),
            p.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")))
    }
}

/// Maximum of `values` over the support of `p`, and the prior mass on the maximizers.
fn support_max(p: &ProbMeasure, values: &[f64]) -> (f64, f64) {
    let vmax = p
        .weights()
        .iter()
        .zip(values)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mass = p
        .weights()
        .iter()
        .zip(values)
        .filter(|(w, v)| **w > 0.0 && **v == vmax)
        .map(|(w, _)| *w)
        .sum();
    (vmax, mass)
}

/// Tilted measure `q ∝ p e^{lambda v}`: returns `(E_q v, KL(q || p))`.
fn tilt(p: &ProbMeasure, values: &[f64], vmax: f64, lambda: f64) -> (f64, f64) {
    let mut z = 0.0;
    let mut ev = 0.0;
    for (&w, &v) in p.weights().iter().zip(values) {
        if w > 0.0 {
            let t = w * (lambda * (v - vmax)).exp();
            z += t;
            ev += t * v;
        }
    }
    let ev = ev / z;
    let kl = lambda * (ev - vmax) - z.ln();
    (ev, kl.max(0.0))
}

/// `sup { E_Q[values] : KL(Q || p) <= kappa }`.
///
/// The maximizer lies on the tilted path `Q_l ∝ p e^{l values}`, along which
/// both the objective and the KL increase; `l` is found by bisection. When
/// `kappa` reaches the KL of `p` conditioned on its maximizers the supremum
/// is the maximum itself.
pub fn kl_ball_sup(p: &ProbMeasure, values: &[f64], kappa: f64) -> Result<f64> {
    check_values(p, values)?;
    check_kappa(kappa)?;
    let (vmax, mass) = support_max(p, values);
    let kl_max = -mass.ln();
    if kappa >= kl_max {
        return Ok(vmax);
    }
    if kappa == 0.0 {
        return Ok(p.expect(values));
    }
    let mut hi = 1.0;
    while tilt(p, values, vmax, hi).1 < kappa {
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(vmax);
        }
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tilt(p, values, vmax, mid).1 <= kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(tilt(p, values, vmax, lo).0)
}

/// `phi(l) = kappa/l + (1/l) ln E_p e^{l values}`, evaluated around the maximum.
fn dual_objective(p: &ProbMeasure, values: &[f64], vmax: f64, kappa: f64, lambda: f64) -> f64 {
    let s: f64 = p
        .weights()
        .iter()
        .zip(values)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, v)| w * (lambda * (v - vmax)).exp())
        .sum();
    vmax + (kappa + s.ln()) / lambda
}

/// Log-spaced grid from `1e-4` to `1e9`, 20 points per decade.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=260).map(|i| 10f64.powf(-4.0 + i as f64 / 20.0)).collect()
}

/// `inf_{l > 0} { kappa/l + (1/l) ln E_p e^{l values} }`.
///
/// The infimum over the grid is refined by golden-section search on the
/// cell around the best grid point. The objective is the perspective of a
/// convex function in `1/l`, hence unimodal along the grid.
pub fn kl_dual_value(p: &ProbMeasure, values: &[f64], kappa: f64, lambda_grid: &[f64]) -> Result<f64> {
    check_values(p, values)?;
    check_kappa(kappa)?;
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid must be nonempty"));
    }
    if lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambda grid entries must be positive and finite"));
    }
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let (vmax, _) = support_max(p, values);
    let phi = |l: f64| dual_objective(p, values, vmax, kappa, l);
    let evals: Vec<f64> = grid.iter().map(|&l| phi(l)).collect();
    let (best, best_val) = evals
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty grid");
    if grid.len() == 1 {
        return Ok(best_val);
    }
    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let refined = golden_section_min(|t| phi(t.exp()), lo, hi, 200);
    Ok(best_val.min(refined))
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Exact `E_P E_S E_eps exp((l/m) sum_i (eps_i - k) f(z_i))` for zero-one losses:
///
/// ```text
/// E_P [ (1 - R(f)) + cosh(l/m) e^{-k l/m} R(f) ]^m
/// ```
///
/// At most 1 whenever `k >= ln cosh(l/m) / (l/m)`.
pub fn debias_mgf_exact(
    p: &ProbMeasure,
    table: &LossTable,
    dist: &DataDistribution,
    lambda_over_m: f64,
    k: f64,
    m: usize,
) -> Result<f64> {
    if !table.is_binary() {
        return Err(Error::invalid("debias MGF needs a zero-one loss table"));
    }
    check_positive("lambda/m", lambda_over_m)?;
    if !k.is_finite() {
        return Err(Error::invalid(format!("k must be finite, got {k}")));
    }
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    p.check_table(table)?;
    let risks = gibbs::true_risks(table, dist)?;
    let factor_minus_one = (log_cosh(lambda_over_m) - k * lambda_over_m).exp_m1();
    Ok(p.weights()
        .iter()
        .zip(&risks)
        .map(|(w, r)| w * (m as f64 * (r * factor_minus_one).ln_1p()).exp())
        .sum())
}

/// Upper end `(h^2 c - c2) / (2 (1 + h^2 c)(1 + c2))` of the admissible `l/m`.
pub fn xy_lambda_cap(c: f64, c2: f64, h: f64) -> f64 {
    let hc = h * h * c;
    (hc - c2) / (2.0 * (1.0 + hc) * (1.0 + c2))
}

/// Outcome of [`xy_mgf_bruteforce_forced`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XyEvaluation {
    pub value: f64,
    pub cap: f64,
    pub constraints_hold: bool,
}

fn xy_check_shape(mu: &[f64], h: f64) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::invalid("mu must be nonempty"));
    }
    if mu.len() > XY_MAX_M {
        return Err(Error::ResourceLimit(format!(
            "exhaustive XY enumeration is limited to m <= {XY_MAX_M}, got {}",
            mu.len()
        )));
    }
    if mu.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::invalid("mu entries must lie in [0, 1]"));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::invalid(format!("h must lie in (0, 1], got {h}")));
    }
    Ok(())
}

fn xy_constraints_hold(lambda_over_m: f64, c: f64, c2: f64, h: f64) -> bool {
    let cap = xy_lambda_cap(c, c2, h);
    c2 > 0.0 && c2 < h * h * c && lambda_over_m > 0.0 && lambda_over_m < cap
}

/// Adversarial MGF
///
/// ```text
/// max_Y E_{eps,X} exp((l/m) sum_i X_i [(eps_i + eps''_i) - eps''_i (1-h^2) Y_i])
/// ```
///
/// with `X_i ~ Bernoulli(mu_i)`, Rademacher `eps_i`,
/// `eps''_i = eps_i (c+c2)/2 - (c-c2)/2` and `Y_i in [0,1]` allowed to depend
/// on `(eps, X)`. The exponent is affine in each `Y_i`, so the adversary
/// plays a vertex of `{0,1}^m` for each sign pattern; all `2^m x 2^m`
/// combinations are enumerated and `X` is integrated exactly per coordinate.
///
/// Rejects parameters outside `0 < c2 < h^2 c`, `0 < l/m < cap`.
pub fn xy_mgf_bruteforce(mu: &[f64], lambda_over_m: f64, c: f64, c2: f64, h: f64) -> Result<f64> {
    xy_check_shape(mu, h)?;
    if !xy_constraints_hold(lambda_over_m, c, c2, h) {
        return Err(Error::invalid(format!(
            "need 0 < c2 < h^2 c and 0 < lambda/m < {} (got c={c}, c2={c2}, h={h}, lambda/m={lambda_over_m})",
            xy_lambda_cap(c, c2, h)
        )));
    }
    Ok(xy_enumerate(mu, lambda_over_m, c, c2, h))
}

/// As [`xy_mgf_bruteforce`], but evaluates outside the admissible region too
/// and records whether the constraints held.
pub fn xy_mgf_bruteforce_forced(
    mu: &[f64],
    lambda_over_m: f64,
    c: f64,
    c2: f64,
    h: f64,
) -> Result<XyEvaluation> {
    xy_check_shape(mu, h)?;
    if !(lambda_over_m.is_finite() && c.is_finite() && c2.is_finite()) {
        return Err(Error::invalid("parameters must be finite"));
    }
    Ok(XyEvaluation {
        value: xy_enumerate(mu, lambda_over_m, c, c2, h),
        cap: xy_lambda_cap(c, c2, h),
        constraints_hold: xy_constraints_hold(lambda_over_m, c, c2, h),
    })
}

fn xy_enumerate(mu: &[f64], x: f64, c: f64, c2: f64, h: f64) -> f64 {
    let m = mu.len();
    let one_minus_h2 = 1.0 - h * h;
    // factors[i][e][y]: E_X exp(x X_i a(eps, y)) for eps = +1 (e=0) / -1 (e=1).
    let factors: Vec<[[f64; 2]; 2]> = mu
        .iter()
        .map(|&u| {
            let mut f = [[0.0; 2]; 2];
            for (e, eps) in [1.0f64, -1.0].into_iter().enumerate() {
                let eps2 = eps * (c + c2) / 2.0 - (c - c2) / 2.0;
                for (y, yv) in [0.0f64, 1.0].into_iter().enumerate() {
                    let a = (eps + eps2) - eps2 * one_minus_h2 * yv;
                    f[e][y] = 1.0 - u + u * (x * a).exp();
                }
            }
            f
        })
        .collect();

    let patterns = 1usize << m;
    let mut total = 0.0;
    for eps_mask in 0..patterns {
        let mut best = f64::NEG_INFINITY;
        for y_mask in 0..patterns {
            let mut prod = 1.0;
            for (i, f) in factors.iter().enumerate() {
                prod *= f[(eps_mask >> i) & 1][(y_mask >> i) & 1];
            }
            best = best.max(prod);
        }
        total += best;
    }
    total / patterns as f64
}

/// Smallest `t` covered by the shifted-flatness tail inequality:
/// `(1+c2)(1+c2 h^2) / (m c2 h^2)`.
pub fn shifted_flatness_threshold(m: usize, c2: f64, h: f64) -> f64 {
    let h2 = h * h;
    (1.0 + c2) * (1.0 + c2 * h2) / (m as f64 * c2 * h2)
}

/// Estimates `P_S( R(f) - (1+c2) R_S(f) + c2 (1-h^2) R_S(f^2) >= t/2 )`.
#[allow(clippy::too_many_arguments)]
pub fn shifted_flatness_tail_mc(
    table: &LossTable,
    f: usize,
    dist: &DataDistribution,
    m: usize,
    c2: f64,
    h: f64,
    t: f64,
    trials: u64,
    seed: u64,
) -> Result<TailEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    check_positive("c2", c2)?;
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::invalid(format!("h must lie in [0, 1], got {h}")));
    }
    let risk = model::true_risk(table, f, dist)?;
    let row = table.row(f);
    let sq: Vec<f64> = row.iter().map(|v| v * v).collect();
    let shrink = c2 * (1.0 - h * h);
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let s = model::draw_sample(dist, m, rng::derive_seed(seed, i))?;
            let emp = model::empirical_row_mean(row, &s);
            let emp_sq = model::empirical_row_mean(&sq, &s);
            Ok(risk - (1.0 + c2) * emp + shrink * emp_sq >= t / 2.0)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&hit| hit)
        .count() as u64;
    Ok(TailEstimate::from_counts(hits, trials))
}

/// A finite problem for the symmetrization checks.
#[derive(Debug, Clone, Copy)]
pub struct SymmetrizationInstance<'a> {
    pub table: &'a LossTable,
    pub dist: &'a DataDistribution,
    pub prior: &'a ProbMeasure,
}

/// Which symmetrization inequality to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizationVariant {
    /// `P(sup L_D - (1+c) L_S >= t) <= 4 P(sup (1+c'/2)/m sum (eps_i - c'/(2+c')) g(z_i) >= t'/2)`
    /// with `c' = (c-c2)/(1+c2)`, `t' = t/(2(1+c2))`. The class is the KL ball
    /// around the prior; both suprema are exact via [`kl_ball_sup`].
    Linear,
    /// The quadratic version with flatness exponent `h`. The objective is not
    /// linear in `Q`, so the class is the finite subset of the KL ball made of
    /// the prior mean and every hypothesis whose point mass lies in the ball.
    Quadratic { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationParams {
    pub variant: SymmetrizationVariant,
    pub c: f64,
    pub c2: f64,
    pub kappa: f64,
    pub m: usize,
}

impl SymmetrizationParams {
    /// Smallest `t` covered by the inequality.
    pub fn min_t(&self) -> f64 {
        match self.variant {
            SymmetrizationVariant::Linear => (1.0 + self.c2).powi(2) / (self.m as f64 * self.c2),
            SymmetrizationVariant::Quadratic { h } => shifted_flatness_threshold(self.m, self.c2, h),
        }
    }
}

/// Tail estimates of both sides of a symmetrization-in-deviation inequality.
/// The inequality asserts `lhs.probability <= 4 * rhs.probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationTails {
    pub lhs: TailEstimate,
    pub rhs: TailEstimate,
}

/// Candidate functions `g = E_Q f` for the quadratic variant, as rows over points.
fn quadratic_class(inst: &SymmetrizationInstance<'_>, kappa: f64) -> Vec<Vec<f64>> {
    let table = inst.table;
    let mut class = vec![gibbs::gibbs_loss_vector(inst.prior, table).expect("checked sizes")];
    for (f, &w) in inst.prior.weights().iter().enumerate() {
        if w > 0.0 && -w.ln() <= kappa {
            class.push(table.row(f).to_vec());
        }
    }
    class
}

/// Monte-Carlo estimates of both tails of a symmetrization inequality.
pub fn symmetrization_tail_mc(
    inst: &SymmetrizationInstance<'_>,
    params: &SymmetrizationParams,
    t: f64,
    trials: u64,
    seed: u64,
) -> Result<SymmetrizationTails> {
    let SymmetrizationParams { variant, c, c2, kappa, m } = *params;
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    check_positive("c", c)?;
    check_open("c2", c2, 0.0, c)?;
    check_kappa(kappa)?;
    inst.prior.check_table(inst.table)?;
    let true_risks = gibbs::true_risks(inst.table, inst.dist)?;

    let per_trial = |i: u64| -> Result<(bool, bool)> {
        let trial_seed = rng::derive_seed(seed, i);
        let s = model::draw_sample(inst.dist, m, trial_seed)?;
        let mut sign_rng = rng::stream(trial_seed, 1);
        match variant {
            SymmetrizationVariant::Linear => {
                let spec = ShiftedRademacherSpec::matched_catoni(m, c, c2)?;
                let signs = spec.draw_signs(&mut sign_rng);
                let emp = gibbs::empirical_risks(inst.table, &s)?;
                let dev: Vec<f64> = true_risks
                    .iter()
                    .zip(&emp)
                    .map(|(r, e)| r - (1.0 + c) * e)
                    .collect();
                let lhs = kl_ball_sup(inst.prior, &dev, kappa)? >= t;

                let cp = (c - c2) / (1.0 + c2);
                let scale = (1.0 + cp / 2.0) / m as f64;
                let proc_values: Vec<f64> = inst
                    .table
                    .rows()
                    .map(|row| {
                        scale
                            * s.indices()
                                .iter()
                                .zip(&signs)
                                .map(|(&z, &e)| spec.shifted(e) * row[z])
                                .sum::<f64>()
                    })
                    .collect();
                let t_prime = t / (2.0 * (1.0 + c2));
                let rhs = kl_ball_sup(inst.prior, &proc_values, kappa)? >= t_prime / 2.0;
                Ok((lhs, rhs))
            }
            SymmetrizationVariant::Quadratic { h } => {
                if !(0.0..=1.0).contains(&h) {
                    return Err(Error::invalid(format!("h must lie in [0, 1], got {h}")));
                }
                let spec = ShiftedRademacherSpec::flatness(m, c, c2)?;
                let signs = spec.draw_signs(&mut sign_rng);
                let (cp, cpp) = spec.scale_shift;
                let q = 1.0 - h * h;
                let mf = m as f64;
                let mut lhs = false;
                let mut rhs = false;
                for g in quadratic_class(inst, kappa) {
                    let risk = model::dot(&g, inst.dist.probs());
                    let mut emp = 0.0;
                    let mut emp_sq = 0.0;
                    let mut process = 0.0;
                    for (&z, &e) in s.indices().iter().zip(&signs) {
                        let v = g[z];
                        emp += v;
                        emp_sq += v * v;
                        process += e * ((1.0 + cp) * v - cp * q * v * v);
                    }
                    let (emp, emp_sq, process) = (emp / mf, emp_sq / mf, process / mf);
                    lhs |= risk - (1.0 + c) * emp + c * q * emp_sq >= t;
                    rhs |= process - cpp * (emp - q * emp_sq) >= t / 4.0;
                }
                Ok((lhs, rhs))
            }
        }
    };

    let outcomes = (0..trials)
        .into_par_iter()
        .map(per_trial)
        .collect::<Result<Vec<_>>>()?;
    let lhs = outcomes.iter().filter(|o| o.0).count() as u64;
    let rhs = outcomes.iter().filter(|o| o.1).count() as u64;
    Ok(SymmetrizationTails {
        lhs: TailEstimate::from_counts(lhs, trials),
        rhs: TailEstimate::from_counts(rhs, trials),
    })
}
