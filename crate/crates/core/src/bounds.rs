//! Closed-form PAC-Bayes certificates.
//!
//! Five families are supported:
//!
//! | family           | value                                                          |
//! |------------------|----------------------------------------------------------------|
//! | `mcallester`     | `L + sqrt((KL + ln(m/delta)) / (2(m-1)))`                      |
//! | `catoni`         | `[C L + (KL + ln(1/delta))/m] / (1 - e^-C)`                    |
//! | `kst`            | `L + 4.5 sqrt(max(KL,2)/m) + sqrt(ln(1/delta)/m)`              |
//! | `matched_catoni` | `(1+c) L + (C1 KL + C2 ln(1/delta) + C3)/m`                    |
//! | `flatness`       | `L + c * flat_h(Q) + 4/(C m) [3 KL + ln(1/delta) + 5]`         |
//!
//! with `C = 2h^4 c / (1 + 16 h^2 c)` for the flatness family. `L` is the
//! empirical Gibbs risk. An infinite KL propagates to an infinite (vacuous)
//! bound in every family.
//!
//! The constants `C1, C2, C3` of the matched-Catoni family are not given in
//! closed form; [`derive_matched_catoni_constants`] extracts them. With
//! `c' = (c-c2)/(1+c2)` the scale `x = lambda/m` must satisfy
//! `ln cosh(x)/x <= c'/(c'+2)` and `x <= 2(1+c2)(2+c') ln(4/delta) c2/(1+c2)^2`.
//! Then `C' = 2(1+c2)(2+c')/x`, and relaxing the peeled bound
//! `C'/m (2 max(KL,1) + ln max(KL,1) + ln(8/delta))` with
//! `ln max(KL,1) <= max(KL,1) <= KL + 1` gives
//! `C1 = 3C'`, `C2 = C'`, `C3 = C'(3 + ln 8)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_open, check_positive, Error, Result};
use crate::gibbs::{self, ProbMeasure};
use crate::model::{LossTable, Sample};

/// Bisection tolerance for every scalar root in this module.
pub const ROOT_TOL: f64 = 1e-12;
/// Bracket for the `ln cosh(x)/x = target` root.
pub const LAMBDA_BRACKET: (f64, f64) = (1e-12, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    McAllester,
    Catoni,
    Kst,
    MatchedCatoni,
    Flatness,
}

impl BoundFamily {
    pub const ALL: [BoundFamily; 5] = [
        BoundFamily::McAllester,
        BoundFamily::Catoni,
        BoundFamily::Kst,
        BoundFamily::MatchedCatoni,
        BoundFamily::Flatness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundFamily::McAllester => "mcallester",
            BoundFamily::Catoni => "catoni",
            BoundFamily::Kst => "kst",
            BoundFamily::MatchedCatoni => "matched_catoni",
            BoundFamily::Flatness => "flatness",
        }
    }
}

impl fmt::Display for BoundFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        BoundFamily::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown bound family {s:?} (expected one of mcallester, catoni, kst, matched_catoni, flatness)"
                ))
            })
    }
}

/// Parameters shared by the bound families. Each family reads only the
/// fields it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    /// Catoni's `C`.
    pub catoni_c: f64,
    /// Empirical-risk inflation `c` (matched-Catoni and flatness families).
    pub c: f64,
    /// Auxiliary constant of the matched-Catoni family; `c/2` when unset.
    pub c2: Option<f64>,
    /// Flatness exponent, in `(0, 1)` for the flatness family.
    pub h: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            delta: 0.05,
            catoni_c: 1.0,
            c: 1.0,
            c2: None,
            h: 0.5,
        }
    }
}

impl BoundParams {
    /// `c2` for the matched-Catoni family.
    pub fn matched_c2(&self) -> f64 {
        self.c2.unwrap_or(self.c / 2.0)
    }

    /// The auxiliary `c2 = h^2 c / (1 + 16 h^2 c)` fixed by the flatness bound.
    pub fn flatness_c2(&self) -> f64 {
        flatness_c2(self.c, self.h)
    }

    pub fn validate(&self, family: BoundFamily) -> Result<()> {
        check_open("delta", self.delta, 0.0, 1.0)?;
        match family {
            BoundFamily::McAllester | BoundFamily::Kst => Ok(()),
            BoundFamily::Catoni => check_positive("C", self.catoni_c),
            BoundFamily::MatchedCatoni => {
                check_positive("c", self.c)?;
                check_open("c2", self.matched_c2(), 0.0, self.c)
            }
            BoundFamily::Flatness => {
                check_positive("c", self.c)?;
                check_open("h", self.h, 0.0, 1.0)
            }
        }
    }
}

/// `c2 = h^2 c / (1 + 16 h^2 c)`.
pub fn flatness_c2(c: f64, h: f64) -> f64 {
    let hc = h * h * c;
    hc / (1.0 + 16.0 * hc)
}

/// Rate constant `C = 2 h^4 c / (1 + 16 h^2 c)` of the flatness bound.
pub fn flatness_rate_constant(c: f64, h: f64) -> f64 {
    let h2 = h * h;
    2.0 * h2 * h2 * c / (1.0 + 16.0 * h2 * c)
}

/// Constraint values recorded at the chosen `lambda/m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantProvenance {
    pub c: f64,
    pub c2: f64,
    pub delta: f64,
    /// `c'/(c'+2)`, the admissible value of `ln cosh(x)/x`.
    pub target: f64,
    /// Bisection root of `ln cosh(x)/x = target` (clamped to the bracket).
    pub root: f64,
    /// `2(1+c2)(2+c') ln(4/delta) c2/(1+c2)^2`, evaluated at the supplied delta.
    pub delta_cap: f64,
    pub cap_active: bool,
    /// `ln cosh(x)/x` at the chosen `x`.
    pub log_cosh_ratio: f64,
    /// `t' = t * t_prime_factor`, with `t_prime_factor = 1/(2(1+c2))`.
    pub t_prime_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub lambda_over_m: f64,
    /// `c' = (c - c2)/(1 + c2)`.
    pub c_prime: f64,
    /// `c'' = (c - c2)/2`.
    pub c_doubleprime: f64,
    /// `C' = 2(1+c2)(2+c')/(lambda/m)`.
    pub c_big: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub provenance: ConstantProvenance,
}

/// Named breakdown of a bound value. `value = empirical + flatness + complexity`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundComponents {
    /// Term proportional to the empirical Gibbs risk.
    pub empirical: f64,
    /// `c * flatness` (flatness family only).
    pub flatness: f64,
    /// KL and confidence term.
    pub complexity: f64,
}

impl BoundComponents {
    pub fn total(&self) -> f64 {
        self.empirical + self.flatness + self.complexity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub family: BoundFamily,
    pub value: f64,
    pub components: BoundComponents,
    /// Catoni's `C` or the flatness rate constant, where the family has one.
    pub rate_constant: Option<f64>,
    pub constants: Option<DerivedConstants>,
}

impl BoundReport {
    fn new(
        family: BoundFamily,
        components: BoundComponents,
        rate_constant: Option<f64>,
        constants: Option<DerivedConstants>,
    ) -> Self {
        Self {
            family,
            value: components.total(),
            components,
            rate_constant,
            constants,
        }
    }
}

/// Sufficient statistics of a posterior for evaluating any family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub emp: f64,
    pub kl: f64,
    pub m: usize,
    /// h-flatness at the `h` of the accompanying params; required by the flatness family.
    pub flatness: Option<f64>,
}

fn check_common(emp: f64, kl: f64, delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&emp) {
        return Err(Error::invalid(format!("empirical risk {emp} outside [0, 1]")));
    }
    if kl.is_nan() || kl < 0.0 {
        return Err(Error::invalid(format!("KL must be nonnegative, got {kl}")));
    }
    check_open("delta", delta, 0.0, 1.0)
}

fn check_m(m: usize, min: usize) -> Result<()> {
    if m >= min {
        Ok(())
    } else {
        Err(Error::invalid(format!("m must be at least {min}, got {m}")))
    }
}

pub fn mcallester_report(emp: f64, kl: f64, m: usize, delta: f64) -> Result<BoundReport> {
    check_common(emp, kl, delta)?;
    check_m(m, 2)?;
    let m = m as f64;
    let complexity = ((kl + (m / delta).ln()) / (2.0 * (m - 1.0))).sqrt();
    Ok(BoundReport::new(
        BoundFamily::McAllester,
        BoundComponents {
            empirical: emp,
            flatness: 0.0,
            complexity,
        },
        None,
        None,
    ))
}

/// `emp + sqrt((kl + ln(m/delta)) / (2(m-1)))`; needs `m >= 2`.
pub fn mcallester_bound(emp: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    mcallester_report(emp, kl, m, delta).map(|r| r.value)
}

/// `C / (1 - e^{-C})`, accurate down to tiny `C`.
pub fn catoni_prefactor(catoni_c: f64) -> f64 {
    catoni_c / -(-catoni_c).exp_m1()
}

pub fn catoni_report(emp: f64, kl: f64, m: usize, delta: f64, catoni_c: f64) -> Result<BoundReport> {
    check_common(emp, kl, delta)?;
    check_m(m, 1)?;
    check_positive("C", catoni_c)?;
    let denom = -(-catoni_c).exp_m1();
    Ok(BoundReport::new(
        BoundFamily::Catoni,
        BoundComponents {
            empirical: catoni_prefactor(catoni_c) * emp,
            flatness: 0.0,
            complexity: (kl + (1.0 / delta).ln()) / (m as f64 * denom),
        },
        Some(catoni_c),
        None,
    ))
}

/// `[C emp + (kl + ln(1/delta))/m] / (1 - e^{-C})`.
pub fn catoni_bound(emp: f64, kl: f64, m: usize, delta: f64, catoni_c: f64) -> Result<f64> {
    catoni_report(emp, kl, m, delta, catoni_c).map(|r| r.value)
}

pub fn kst_report(emp: f64, kl: f64, m: usize, delta: f64) -> Result<BoundReport> {
    check_common(emp, kl, delta)?;
    check_m(m, 1)?;
    let m = m as f64;
    let complexity = 4.5 * (kl.max(2.0) / m).sqrt() + ((1.0 / delta).ln() / m).sqrt();
    Ok(BoundReport::new(
        BoundFamily::Kst,
        BoundComponents {
            empirical: emp,
            flatness: 0.0,
            complexity,
        },
        None,
        None,
    ))
}

/// `emp + 4.5 sqrt(max(kl, 2)/m) + sqrt(ln(1/delta)/m)`.
pub fn kst_bound(emp: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    kst_report(emp, kl, m, delta).map(|r| r.value)
}

/// `ln cosh(x)` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-4 {
        let a2 = a * a;
        a2 / 2.0 - a2 * a2 / 12.0
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `ln cosh(x) / x` for `x > 0`; increasing from 0 towards 1.
pub fn log_cosh_ratio(x: f64) -> f64 {
    if x < 1e-4 {
        x / 2.0 - x * x * x / 12.0
    } else {
        log_cosh(x) / x
    }
}

/// Largest `x` in the bracket with `ln cosh(x)/x <= target`, to [`ROOT_TOL`].
fn log_cosh_root(target: f64) -> f64 {
    let (mut lo, mut hi) = LAMBDA_BRACKET;
    if log_cosh_ratio(hi) <= target {
        return hi;
    }
    if log_cosh_ratio(lo) > target {
        return lo;
    }
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if log_cosh_ratio(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Explicit constants for the matched-Catoni bound.
pub fn derive_matched_catoni_constants(c: f64, c2: f64, delta: f64) -> Result<DerivedConstants> {
    check_positive("c", c)?;
    check_open("c2", c2, 0.0, c)?;
    check_open("delta", delta, 0.0, 1.0)?;

    let c_prime = (c - c2) / (1.0 + c2);
    let target = c_prime / (c_prime + 2.0);
    let root = log_cosh_root(target);
    let delta_cap = 2.0 * (1.0 + c2) * (2.0 + c_prime) * (4.0 / delta).ln() * c2 / ((1.0 + c2) * (1.0 + c2));
    let cap_active = delta_cap < root;
    let lambda_over_m = root.min(delta_cap);

    let c_big = 2.0 * (1.0 + c2) * (2.0 + c_prime) / lambda_over_m;
    Ok(DerivedConstants {
        lambda_over_m,
        c_prime,
        c_doubleprime: (c - c2) / 2.0,
        c_big,
        c1: 3.0 * c_big,
        c2: c_big,
        c3: c_big * (3.0 + 8f64.ln()),
        provenance: ConstantProvenance {
            c,
            c2,
            delta,
            target,
            root,
            delta_cap,
            cap_active,
            log_cosh_ratio: log_cosh_ratio(lambda_over_m),
            t_prime_factor: 1.0 / (2.0 * (1.0 + c2)),
        },
    })
}

pub fn matched_catoni_report(
    emp: f64,
    kl: f64,
    m: usize,
    delta: f64,
    c: f64,
    c2: f64,
) -> Result<BoundReport> {
    check_common(emp, kl, delta)?;
    check_m(m, 1)?;
    let k = derive_matched_catoni_constants(c, c2, delta)?;
    let complexity = (k.c1 * kl + k.c2 * (1.0 / delta).ln() + k.c3) / m as f64;
    Ok(BoundReport::new(
        BoundFamily::MatchedCatoni,
        BoundComponents {
            empirical: (1.0 + c) * emp,
            flatness: 0.0,
            complexity,
        },
        Some(k.lambda_over_m),
        Some(k),
    ))
}

/// `(1+c) emp + (C1 kl + C2 ln(1/delta) + C3)/m`.
pub fn matched_catoni_bound(emp: f64, kl: f64, m: usize, delta: f64, c: f64, c2: f64) -> Result<f64> {
    matched_catoni_report(emp, kl, m, delta, c, c2).map(|r| r.value)
}

/// Flatness bound from precomputed statistics. `flatness` is the h-flatness
/// of the posterior (not yet multiplied by `c`).
pub fn flatness_report(
    emp: f64,
    flatness: f64,
    kl: f64,
    m: usize,
    delta: f64,
    c: f64,
    h: f64,
) -> Result<BoundReport> {
    check_common(emp, kl, delta)?;
    check_m(m, 1)?;
    check_positive("c", c)?;
    check_open("h", h, 0.0, 1.0)?;
    if flatness.is_nan() || flatness < 0.0 {
        return Err(Error::invalid(format!("flatness must be nonnegative, got {flatness}")));
    }
    let rate = flatness_rate_constant(c, h);
    let complexity = 4.0 / (rate * m as f64) * (3.0 * kl + (1.0 / delta).ln() + 5.0);
    Ok(BoundReport::new(
        BoundFamily::Flatness,
        BoundComponents {
            empirical: emp,
            flatness: c * flatness,
            complexity,
        },
        Some(rate),
        None,
    ))
}

/// The flatness bound for posterior `q` on sample `s`.
pub fn flatness_bound(
    q: &ProbMeasure,
    table: &LossTable,
    s: &Sample,
    kl: f64,
    delta: f64,
    c: f64,
    h: f64,
) -> Result<BoundReport> {
    check_open("h", h, 0.0, 1.0)?;
    let emp = gibbs::gibbs_empirical_risk(q, table, s)?;
    let flat = gibbs::flatness(q, table, s, h)?.value;
    flatness_report(emp.clamp(0.0, 1.0), flat, kl, s.len(), delta, c, h)
}

/// Evaluates `family` from sufficient statistics.
pub fn evaluate(family: BoundFamily, params: &BoundParams, inputs: &BoundInputs) -> Result<BoundReport> {
    params.validate(family)?;
    let BoundInputs { emp, kl, m, flatness } = *inputs;
    match family {
        BoundFamily::McAllester => mcallester_report(emp, kl, m, params.delta),
        BoundFamily::Catoni => catoni_report(emp, kl, m, params.delta, params.catoni_c),
        BoundFamily::Kst => kst_report(emp, kl, m, params.delta),
        BoundFamily::MatchedCatoni => {
            matched_catoni_report(emp, kl, m, params.delta, params.c, params.matched_c2())
        }
        BoundFamily::Flatness => {
            let flat = flatness.ok_or_else(|| Error::invalid("flatness family needs the posterior's h-flatness"))?;
            flatness_report(emp, flat, kl, m, params.delta, params.c, params.h)
        }
    }
}

/// Statistics of posterior `q` against prior `p` on sample `s`.
pub fn posterior_inputs(
    family: BoundFamily,
    params: &BoundParams,
    q: &ProbMeasure,
    p: &ProbMeasure,
    table: &LossTable,
    s: &Sample,
) -> Result<BoundInputs> {
    let emp = gibbs::gibbs_empirical_risk(q, table, s)?.clamp(0.0, 1.0);
    let kl = gibbs::kl_divergence(q, p)?;
    let flatness = match family {
        BoundFamily::Flatness => Some(gibbs::flatness(q, table, s, params.h)?.value),
        _ => None,
    };
    Ok(BoundInputs {
        emp,
        kl,
        m: s.len(),
        flatness,
    })
}

/// Evaluates `family` for posterior `q` against prior `p` on sample `s`.
pub fn evaluate_posterior(
    family: BoundFamily,
    params: &BoundParams,
    q: &ProbMeasure,
    p: &ProbMeasure,
    table: &LossTable,
    s: &Sample,
) -> Result<BoundReport> {
    params.validate(family)?;
    evaluate(family, params, &posterior_inputs(family, params, q, p, table, s)?)
}

/// Catoni's `C` whose prefactor `C/(1-e^{-C})` equals `1 + c`.
pub fn catoni_c_for_inflation(c: f64) -> Result<f64> {
    check_positive("c", c)?;
    let target = 1.0 + c;
    let (mut lo, mut hi) = (0.0f64, target + 1.0);
    // prefactor(C) >= C, so target + 1 brackets the root.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if catoni_prefactor(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
