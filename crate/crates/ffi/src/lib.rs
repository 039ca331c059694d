//! C interface to the `pacbayes` library.
//!
//! Instances, probability measures and samples cross the boundary as opaque
//! handles created by `pb_*_new`/`pb_*_load` and released with the matching
//! `pb_*_free`. Every fallible call returns a [`PbStatus`]; on failure the
//! message is available from [`pb_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pacbayes::bounds::{self, BoundFamily, BoundInputs, BoundParams, BoundReport};
use pacbayes::gibbs::{self, ProbMeasure};
use pacbayes::instance::Instance;
use pacbayes::model::{self, DataDistribution, LossTable, Sample};
use pacbayes::verify::{self, CoverageConfig, PosteriorRule, RuleOptions};
use pacbayes::Error;

/// A data distribution, loss table, prior and optional posterior.
pub struct PbInstance(Instance);

/// A probability vector over hypotheses.
pub struct PbMeasure(ProbMeasure);

/// A training sample of point indices.
pub struct PbSample(Sample);

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    PB_OK = 0,
    PB_NULL_POINTER = 1,
    PB_INVALID_ARGUMENT = 2,
    PB_RESOURCE_LIMIT = 3,
    PB_PARSE_ERROR = 4,
    PB_IO_ERROR = 5,
    PB_PANIC = 6,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbFamily {
    PB_MCALLESTER = 0,
    PB_CATONI = 1,
    PB_KST = 2,
    PB_MATCHED_CATONI = 3,
    PB_FLATNESS = 4,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbRule {
    /// The instance's own posterior.
    PB_RULE_FIXED = 0,
    /// `q ∝ p exp(-beta m R_S)`.
    PB_RULE_GIBBS = 1,
    /// Bound minimization with the library's default β-grid.
    PB_RULE_MINIMIZER = 2,
}

/// Bound parameters. A NaN `c2` selects the family default.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbParams {
    pub delta: f64,
    pub catoni_c: f64,
    pub c: f64,
    pub c2: f64,
    pub h: f64,
}

/// `value = empirical + flatness + complexity`. `rate_constant` is NaN for
/// families without one.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbBoundReport {
    pub family: PbFamily,
    pub value: f64,
    pub empirical: f64,
    pub flatness: f64,
    pub complexity: f64,
    pub rate_constant: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbCoverageReport {
    pub trials: u64,
    pub violations: u64,
    pub violation_rate: f64,
    pub clopper_pearson_upper: f64,
    pub mean_slack: f64,
    pub min_slack: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

struct Failure(PbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => PbStatus::PB_INVALID_ARGUMENT,
            Error::ResourceLimit(_) => PbStatus::PB_RESOURCE_LIMIT,
            Error::Parse { .. } => PbStatus::PB_PARSE_ERROR,
            Error::Io(_) => PbStatus::PB_IO_ERROR,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PbStatus::PB_NULL_POINTER, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            PbStatus::PB_OK
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            PbStatus::PB_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PbStatus::PB_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

fn family(f: PbFamily) -> BoundFamily {
    match f {
        PbFamily::PB_MCALLESTER => BoundFamily::McAllester,
        PbFamily::PB_CATONI => BoundFamily::Catoni,
        PbFamily::PB_KST => BoundFamily::Kst,
        PbFamily::PB_MATCHED_CATONI => BoundFamily::MatchedCatoni,
        PbFamily::PB_FLATNESS => BoundFamily::Flatness,
    }
}

fn pb_family(f: BoundFamily) -> PbFamily {
    match f {
        BoundFamily::McAllester => PbFamily::PB_MCALLESTER,
        BoundFamily::Catoni => PbFamily::PB_CATONI,
        BoundFamily::Kst => PbFamily::PB_KST,
        BoundFamily::MatchedCatoni => PbFamily::PB_MATCHED_CATONI,
        BoundFamily::Flatness => PbFamily::PB_FLATNESS,
    }
}

impl From<&PbParams> for BoundParams {
    fn from(p: &PbParams) -> Self {
        BoundParams {
            delta: p.delta,
            catoni_c: p.catoni_c,
            c: p.c,
            c2: if p.c2.is_nan() { None } else { Some(p.c2) },
            h: p.h,
        }
    }
}

impl From<&BoundReport> for PbBoundReport {
    fn from(r: &BoundReport) -> Self {
        PbBoundReport {
            family: pb_family(r.family),
            value: r.value,
            empirical: r.components.empirical,
            flatness: r.components.flatness,
            complexity: r.components.complexity,
            rate_constant: r.rate_constant.unwrap_or(f64::NAN),
        }
    }
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `pb_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn pb_params_default() -> PbParams {
    let d = BoundParams::default();
    PbParams {
        delta: d.delta,
        catoni_c: d.catoni_c,
        c: d.c,
        c2: d.c2.unwrap_or(f64::NAN),
        h: d.h,
    }
}

/// Builds an instance from a row-major `hypotheses x points` loss array.
/// `prior` and `posterior` may be NULL (uniform prior, no posterior).
///
/// # Safety
/// Array arguments must point to at least the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_new(
    point_probs: *const f64,
    points: usize,
    losses: *const f64,
    hypotheses: usize,
    prior: *const f64,
    posterior: *const f64,
    out_instance: *mut *mut PbInstance,
) -> PbStatus {
    guard(|| {
        let out_instance = out(out_instance, "out_instance")?;
        let probs = slice(point_probs, points, "point_probs")?;
        let cells = hypotheses
            .checked_mul(points)
            .ok_or_else(|| Failure(PbStatus::PB_INVALID_ARGUMENT, "table size overflows".into()))?;
        let losses = slice(losses, cells, "losses")?;
        let dist = DataDistribution::new(probs.to_vec())?;
        let table = LossTable::from_row_major(hypotheses, points, losses.to_vec())?;
        let prior = if prior.is_null() {
            ProbMeasure::uniform(hypotheses)?
        } else {
            ProbMeasure::new(slice(prior, hypotheses, "prior")?.to_vec())?
        };
        let posterior = if posterior.is_null() {
            None
        } else {
            Some(ProbMeasure::new(slice(posterior, hypotheses, "posterior")?.to_vec())?)
        };
        let inst = Instance::new(dist, table, prior, posterior)?;
        *out_instance = Box::into_raw(Box::new(PbInstance(inst)));
        Ok(())
    })
}

/// Parses an instance from its text form.
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_parse(text: *const c_char, out_instance: *mut *mut PbInstance) -> PbStatus {
    guard(|| {
        let out_instance = out(out_instance, "out_instance")?;
        let inst = Instance::parse(c_str(text, "text")?)?;
        *out_instance = Box::into_raw(Box::new(PbInstance(inst)));
        Ok(())
    })
}

/// Loads an instance file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_load(path: *const c_char, out_instance: *mut *mut PbInstance) -> PbStatus {
    guard(|| {
        let out_instance = out(out_instance, "out_instance")?;
        let inst = Instance::load(c_str(path, "path")?)?;
        *out_instance = Box::into_raw(Box::new(PbInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `instance` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_free(instance: *mut PbInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// # Safety
/// `instance` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_hypothesis_count(instance: *const PbInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.0.table.hypothesis_count())
}

/// # Safety
/// `instance` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_point_count(instance: *const PbInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.0.table.point_count())
}

/// Copies the instance's prior into a new measure handle.
///
/// # Safety
/// `instance` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_prior(instance: *const PbInstance, out_measure: *mut *mut PbMeasure) -> PbStatus {
    guard(|| {
        let out_measure = out(out_measure, "out_measure")?;
        let inst = deref(instance, "instance")?;
        *out_measure = Box::into_raw(Box::new(PbMeasure(inst.0.prior.clone())));
        Ok(())
    })
}

/// Copies the instance's posterior; fails with `PB_INVALID_ARGUMENT` when it has none.
///
/// # Safety
/// `instance` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_instance_posterior(
    instance: *const PbInstance,
    out_measure: *mut *mut PbMeasure,
) -> PbStatus {
    guard(|| {
        let out_measure = out(out_measure, "out_measure")?;
        let inst = deref(instance, "instance")?;
        let q = inst
            .0
            .posterior
            .clone()
            .ok_or_else(|| Failure(PbStatus::PB_INVALID_ARGUMENT, "instance has no posterior".into()))?;
        *out_measure = Box::into_raw(Box::new(PbMeasure(q)));
        Ok(())
    })
}

/// # Safety
/// `weights` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_measure_new(weights: *const f64, len: usize, out_measure: *mut *mut PbMeasure) -> PbStatus {
    guard(|| {
        let out_measure = out(out_measure, "out_measure")?;
        let q = ProbMeasure::new(slice(weights, len, "weights")?.to_vec())?;
        *out_measure = Box::into_raw(Box::new(PbMeasure(q)));
        Ok(())
    })
}

/// # Safety
/// `measure` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pb_measure_free(measure: *mut PbMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// # Safety
/// `measure` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_measure_len(measure: *const PbMeasure) -> usize {
    measure.as_ref().map_or(0, |q| q.0.len())
}

/// Copies the weights into `buf`, which must hold `pb_measure_len` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_measure_weights(measure: *const PbMeasure, buf: *mut f64, len: usize) -> PbStatus {
    guard(|| {
        let q = deref(measure, "measure")?;
        if len != q.0.len() {
            return Err(Failure(
                PbStatus::PB_INVALID_ARGUMENT,
                format!("buffer holds {len} values, measure has {}", q.0.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(q.0.weights());
        Ok(())
    })
}

/// Draws `m` i.i.d. points from the instance's data distribution.
///
/// # Safety
/// `instance` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_sample_draw(
    instance: *const PbInstance,
    m: usize,
    seed: u64,
    out_sample: *mut *mut PbSample,
) -> PbStatus {
    guard(|| {
        let out_sample = out(out_sample, "out_sample")?;
        let inst = deref(instance, "instance")?;
        let s = model::draw_sample(&inst.0.dist, m, seed)?;
        *out_sample = Box::into_raw(Box::new(PbSample(s)));
        Ok(())
    })
}

/// A sample from explicit point indices.
///
/// # Safety
/// `indices` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn pb_sample_new(indices: *const usize, len: usize, out_sample: *mut *mut PbSample) -> PbStatus {
    guard(|| {
        let out_sample = out(out_sample, "out_sample")?;
        let s = Sample::new(slice(indices, len, "indices")?.to_vec(), 0)?;
        *out_sample = Box::into_raw(Box::new(PbSample(s)));
        Ok(())
    })
}

/// # Safety
/// `sample` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pb_sample_free(sample: *mut PbSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// # Safety
/// `sample` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pb_sample_len(sample: *const PbSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.len())
}

/// KL(q || p); `+inf` when q puts mass outside the support of p.
///
/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_kl_divergence(q: *const PbMeasure, p: *const PbMeasure, out_value: *mut f64) -> PbStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        *out_value = gibbs::kl_divergence(&deref(q, "q")?.0, &deref(p, "p")?.0)?;
        Ok(())
    })
}

/// Exact Gibbs risk of `q` under the instance's data distribution.
///
/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_gibbs_risk(instance: *const PbInstance, q: *const PbMeasure, out_value: *mut f64) -> PbStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        let inst = &deref(instance, "instance")?.0;
        *out_value = gibbs::gibbs_risk(&deref(q, "q")?.0, &inst.table, &inst.dist)?;
        Ok(())
    })
}

/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_gibbs_empirical_risk(
    instance: *const PbInstance,
    q: *const PbMeasure,
    sample: *const PbSample,
    out_value: *mut f64,
) -> PbStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        let inst = &deref(instance, "instance")?.0;
        *out_value = gibbs::gibbs_empirical_risk(&deref(q, "q")?.0, &inst.table, &deref(sample, "sample")?.0)?;
        Ok(())
    })
}

/// h-flatness of `q` on the sample, `h` in `(0, 1]`.
///
/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_flatness(
    instance: *const PbInstance,
    q: *const PbMeasure,
    sample: *const PbSample,
    h: f64,
    out_value: *mut f64,
) -> PbStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        let inst = &deref(instance, "instance")?.0;
        *out_value = gibbs::flatness(&deref(q, "q")?.0, &inst.table, &deref(sample, "sample")?.0, h)?.value;
        Ok(())
    })
}

/// Evaluates a bound from sufficient statistics. `flatness` is only read by
/// the flatness family; pass NaN otherwise.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_bound_evaluate(
    family_id: PbFamily,
    params: *const PbParams,
    emp: f64,
    kl: f64,
    m: usize,
    flatness: f64,
    out_report: *mut PbBoundReport,
) -> PbStatus {
    guard(|| {
        let out_report = out(out_report, "out_report")?;
        let params = BoundParams::from(deref(params, "params")?);
        let inputs = BoundInputs {
            emp,
            kl,
            m,
            flatness: if flatness.is_nan() { None } else { Some(flatness) },
        };
        *out_report = (&bounds::evaluate(family(family_id), &params, &inputs)?).into();
        Ok(())
    })
}

/// Evaluates a bound for posterior `q` against prior `p` on a sample.
///
/// # Safety
/// Handles and pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_bound_posterior(
    family_id: PbFamily,
    params: *const PbParams,
    instance: *const PbInstance,
    q: *const PbMeasure,
    p: *const PbMeasure,
    sample: *const PbSample,
    out_report: *mut PbBoundReport,
) -> PbStatus {
    guard(|| {
        let out_report = out(out_report, "out_report")?;
        let params = BoundParams::from(deref(params, "params")?);
        let inst = &deref(instance, "instance")?.0;
        let report = bounds::evaluate_posterior(
            family(family_id),
            &params,
            &deref(q, "q")?.0,
            &deref(p, "p")?.0,
            &inst.table,
            &deref(sample, "sample")?.0,
        )?;
        *out_report = (&report).into();
        Ok(())
    })
}

/// Coverage experiment against the instance's prior. `beta` is read by the
/// Gibbs rule only.
///
/// # Safety
/// Handles and pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_coverage(
    instance: *const PbInstance,
    family_id: PbFamily,
    params: *const PbParams,
    rule: PbRule,
    beta: f64,
    m: usize,
    trials: u64,
    seed: u64,
    out_report: *mut PbCoverageReport,
) -> PbStatus {
    guard(|| {
        let out_report = out(out_report, "out_report")?;
        let params = BoundParams::from(deref(params, "params")?);
        let inst = &deref(instance, "instance")?.0;
        let options = RuleOptions {
            beta,
            fixed: inst.posterior.clone(),
            ..RuleOptions::default()
        };
        let id = match rule {
            PbRule::PB_RULE_FIXED => "fixed",
            PbRule::PB_RULE_GIBBS => "gibbs-posterior",
            PbRule::PB_RULE_MINIMIZER => "bound-minimizer",
        };
        let rule = PosteriorRule::from_id(id, &options)?;
        let config = CoverageConfig {
            params,
            m,
            trials,
            seed,
        };
        let r = verify::coverage_experiment(&inst.table, &inst.dist, &inst.prior, &rule, family(family_id), &config)?;
        *out_report = PbCoverageReport {
            trials: r.trials,
            violations: r.violations,
            violation_rate: r.violation_rate,
            clopper_pearson_upper: r.clopper_pearson_upper,
            mean_slack: r.mean_slack,
            min_slack: r.min_slack,
        };
        Ok(())
    })
}

/// One-sided Clopper–Pearson upper limit for `k` successes in `n` trials.
///
/// # Safety
/// `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_clopper_pearson_upper(k: u64, n: u64, confidence: f64, out_value: *mut f64) -> PbStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        *out_value = verify::clopper_pearson_upper(k, n, confidence)?;
        Ok(())
    })
}
