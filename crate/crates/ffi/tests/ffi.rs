use std::ffi::{CStr, CString};
use std::ptr;

use pacbayes_ffi::*;

const INSTANCE: &str = "\
[space]
0.3 0.3 0.35 0.05
[losses]
1 0 0 0
1 0 0 1
[prior]
0.8 0.2
[posterior]
0.95 0.05
";

fn last_error() -> Option<String> {
    let p = pb_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn parse() -> *mut PbInstance {
    let text = CString::new(INSTANCE).unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { pb_instance_parse(text.as_ptr(), &mut inst) }, PbStatus::PB_OK);
    inst
}

#[test]
fn catoni_through_the_c_interface() {
    let mut params = pb_params_default();
    params.catoni_c = 1.0;
    let mut report = PbBoundReport {
        family: PbFamily::PB_MCALLESTER,
        value: 0.0,
        empirical: 0.0,
        flatness: 0.0,
        complexity: 0.0,
        rate_constant: 0.0,
    };
    let status = unsafe { pb_bound_evaluate(PbFamily::PB_CATONI, &params, 0.1, 2.0, 100, f64::NAN, &mut report) };
    assert_eq!(status, PbStatus::PB_OK);
    assert_eq!(report.family, PbFamily::PB_CATONI);
    assert!((report.value - 0.237_228_991_592_110_2).abs() < 1e-15);
    assert_eq!(report.value, report.empirical + report.flatness + report.complexity);
    assert_eq!(report.rate_constant, 1.0);
    assert!(last_error().is_none());

    let status = unsafe { pb_bound_evaluate(PbFamily::PB_FLATNESS, &params, 0.1, 2.0, 100, f64::NAN, &mut report) };
    assert_eq!(status, PbStatus::PB_INVALID_ARGUMENT);
    assert!(last_error().unwrap().contains("flatness"));
}

#[test]
fn handles_round_trip() {
    let inst = parse();
    unsafe {
        assert_eq!(pb_instance_hypothesis_count(inst), 2);
        assert_eq!(pb_instance_point_count(inst), 4);

        let (mut p, mut q) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(pb_instance_prior(inst, &mut p), PbStatus::PB_OK);
        assert_eq!(pb_instance_posterior(inst, &mut q), PbStatus::PB_OK);
        let mut w = [0.0; 2];
        assert_eq!(pb_measure_weights(q, w.as_mut_ptr(), 2), PbStatus::PB_OK);
        assert_eq!(w, [0.95, 0.05]);
        assert_eq!(pb_measure_weights(q, w.as_mut_ptr(), 3), PbStatus::PB_INVALID_ARGUMENT);

        let mut kl = 0.0;
        assert_eq!(pb_kl_divergence(q, p, &mut kl), PbStatus::PB_OK);
        let expected = 0.95 * (0.95f64 / 0.8).ln() + 0.05 * (0.05f64 / 0.2).ln();
        assert!((kl - expected).abs() < 1e-15);

        let mut risk = 0.0;
        assert_eq!(pb_gibbs_risk(inst, q, &mut risk), PbStatus::PB_OK);
        assert!((risk - (0.3 + 0.05 * 0.05)).abs() < 1e-15);

        let mut s = ptr::null_mut();
        assert_eq!(pb_sample_new([0usize, 3, 3, 2].as_ptr(), 4, &mut s), PbStatus::PB_OK);
        assert_eq!(pb_sample_len(s), 4);
        let mut emp = 0.0;
        assert_eq!(pb_gibbs_empirical_risk(inst, q, s, &mut emp), PbStatus::PB_OK);
        assert!((emp - (1.0 + 2.0 * 0.05) / 4.0).abs() < 1e-15);

        // A point mass on a binary table is flat: flatness = h^2 * empirical risk.
        let mut point = ptr::null_mut();
        assert_eq!(pb_measure_new([1.0, 0.0].as_ptr(), 2, &mut point), PbStatus::PB_OK);
        let mut flat = 0.0;
        assert_eq!(pb_flatness(inst, point, s, 0.5, &mut flat), PbStatus::PB_OK);
        assert!((flat - 0.25 * 0.25).abs() < 1e-15);

        let mut report = std::mem::zeroed::<PbBoundReport>();
        let params = pb_params_default();
        assert_eq!(
            pb_bound_posterior(PbFamily::PB_FLATNESS, &params, inst, q, p, s, &mut report),
            PbStatus::PB_OK
        );
        assert!(report.value > emp);

        let mut bad = ptr::null_mut();
        assert_eq!(pb_sample_new([9usize].as_ptr(), 1, &mut bad), PbStatus::PB_OK);
        assert_eq!(pb_gibbs_empirical_risk(inst, q, bad, &mut emp), PbStatus::PB_INVALID_ARGUMENT);

        pb_sample_free(bad);
        pb_sample_free(s);
        pb_measure_free(point);
        pb_measure_free(p);
        pb_measure_free(q);
        pb_instance_free(inst);
        pb_instance_free(ptr::null_mut());
    }
}

#[test]
fn built_instances_match_parsed_ones() {
    let probs = [0.3, 0.3, 0.35, 0.05];
    let losses = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let mut built = ptr::null_mut();
    let status = unsafe { pb_instance_new(probs.as_ptr(), 4, losses.as_ptr(), 2, ptr::null(), ptr::null(), &mut built) };
    assert_eq!(status, PbStatus::PB_OK);
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(pb_instance_prior(built, &mut p), PbStatus::PB_OK);
        let mut w = [0.0; 2];
        pb_measure_weights(p, w.as_mut_ptr(), 2);
        assert_eq!(w, [0.5, 0.5]);
        let mut q = ptr::null_mut();
        assert_eq!(pb_instance_posterior(built, &mut q), PbStatus::PB_INVALID_ARGUMENT);
        assert!(q.is_null());
        pb_measure_free(p);
        pb_instance_free(built);
    }

    let bad_probs = [0.5, 0.6];
    let status = unsafe { pb_instance_new(bad_probs.as_ptr(), 2, losses.as_ptr(), 1, ptr::null(), ptr::null(), &mut built) };
    assert_eq!(status, PbStatus::PB_INVALID_ARGUMENT);
}

#[test]
fn coverage_is_deterministic_and_sound() {
    let inst = parse();
    let params = pb_params_default();
    let mut a = unsafe { std::mem::zeroed::<PbCoverageReport>() };
    let mut b = a;
    unsafe {
        assert_eq!(
            pb_coverage(inst, PbFamily::PB_CATONI, &params, PbRule::PB_RULE_GIBBS, 1.0, 50, 300, 7, &mut a),
            PbStatus::PB_OK
        );
        assert_eq!(
            pb_coverage(inst, PbFamily::PB_CATONI, &params, PbRule::PB_RULE_GIBBS, 1.0, 50, 300, 7, &mut b),
            PbStatus::PB_OK
        );
        assert_eq!(a, b);
        assert_eq!(a.trials, 300);
        assert!(a.clopper_pearson_upper <= params.delta, "{a:?}");
        assert_eq!(a.violation_rate, a.violations as f64 / 300.0);

        assert_eq!(
            pb_coverage(inst, PbFamily::PB_KST, &params, PbRule::PB_RULE_FIXED, 0.0, 50, 50, 7, &mut a),
            PbStatus::PB_OK
        );
        pb_instance_free(inst);
    }
}

#[test]
fn clopper_pearson_and_errors() {
    let mut upper = 0.0;
    assert_eq!(unsafe { pb_clopper_pearson_upper(0, 100, 0.95, &mut upper) }, PbStatus::PB_OK);
    assert!((upper - (1.0 - 0.05f64.powf(0.01))).abs() < 1e-12);
    assert_eq!(unsafe { pb_clopper_pearson_upper(0, 0, 0.95, &mut upper) }, PbStatus::PB_INVALID_ARGUMENT);
    assert!(last_error().unwrap().contains("trials"));
    assert_eq!(unsafe { pb_clopper_pearson_upper(0, 10, 0.95, ptr::null_mut()) }, PbStatus::PB_NULL_POINTER);

    let mut inst = ptr::null_mut();
    let bad = CString::new("[space]\n0.5 0.5\n[losses]\n0 x\n").unwrap();
    assert_eq!(unsafe { pb_instance_parse(bad.as_ptr(), &mut inst) }, PbStatus::PB_PARSE_ERROR);
    assert!(last_error().unwrap().contains("line 4"));
    let missing = CString::new("/nonexistent/instance.txt").unwrap();
    assert_eq!(unsafe { pb_instance_load(missing.as_ptr(), &mut inst) }, PbStatus::PB_IO_ERROR);
    assert_eq!(unsafe { pb_instance_parse(ptr::null(), &mut inst) }, PbStatus::PB_NULL_POINTER);
    assert!(inst.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pacbayes.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct PbInstance PbInstance;", "typedef enum PbStatus", "PB_PARSE_ERROR = 4"] {
        assert!(header.contains(ty), "{ty}");
    }
    assert_eq!(unsafe { CStr::from_ptr(pb_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
