use std::ffi::{CStr, CString};
use std::ptr;

use pseudoherm_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ph_last_error()) }.to_string_lossy().into_owned()
}

fn model(family: &str, params: &[usize]) -> Result<*mut PhModel, PhStatus> {
    let f = CString::new(family).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { ph_model_new(f.as_ptr(), params.as_ptr(), params.len(), &mut out) };
    if st == PhStatus::Ok {
        Ok(out)
    } else {
        Err(st)
    }
}

#[test]
fn model_constants_match_closed_forms() {
    let m = model("su_pq", &[2, 2]).unwrap();
    unsafe {
        assert_eq!(ph_model_half_dim(m), 4);
        let mut c = ptr::null_mut();
        assert_eq!(ph_model_curvature(m, &mut c), PhStatus::Ok);
        let mut k = PhConstants::default();
        assert_eq!(ph_curvature_constants(c, &mut k), PhStatus::Ok);
        assert_eq!(k.d, 4);
        assert!((k.c0_prime - 5.0 / 16.0).abs() < 1e-12);
        assert!((k.kappa + 0.25).abs() < 1e-12);
        assert!(k.pseudo_einstein);
        let n = ph_curvature_dim(c);
        assert_eq!(n, 8);
        let mut buf = vec![0.0; n.pow(4)];
        assert_eq!(ph_curvature_components(c, buf.as_mut_ptr(), buf.len() - 1), PhStatus::BufferTooSmall);
        assert!(last_error().contains("need 4096"));
        assert_eq!(ph_curvature_components(c, buf.as_mut_ptr(), buf.len()), PhStatus::Ok);
        assert!(buf.iter().any(|v| *v != 0.0));
        let mut r = PhRanges::default();
        assert_eq!(ph_curvature_sample(c, 200, 1, &mut r), PhStatus::Ok);
        assert!(r.complex_sectional_max <= 1e-10);
        ph_curvature_free(c);
        ph_model_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    assert_eq!(model("e6_14", &[]).unwrap_err(), PhStatus::OutOfScope);
    assert_eq!(model("su_pq", &[0, 1]).unwrap_err(), PhStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(model("nope", &[]).unwrap_err(), PhStatus::InvalidArgument);
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ph_model_new(ptr::null(), ptr::null(), 0, &mut out), PhStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(ph_model_new(bad.as_ptr().cast(), ptr::null(), 0, &mut out), PhStatus::InvalidUtf8);
        assert_eq!(ph_curvature_constants(ptr::null(), ptr::null_mut()), PhStatus::NullPointer);
        ph_model_free(ptr::null_mut());
        ph_curvature_free(ptr::null_mut());
        ph_string_free(ptr::null_mut());
    }
}

#[test]
fn closed_form_curvatures() {
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(ph_space_form_new(3, -12.0, &mut c), PhStatus::Ok);
        let mut k = PhConstants::default();
        assert_eq!(ph_curvature_constants(c, &mut k), PhStatus::Ok);
        assert!((k.scalar + 12.0).abs() < 1e-10);
        assert!(k.cm_norm2.abs() < 1e-12);
        ph_curvature_free(c);
        assert_eq!(ph_torsion_model_new(2, -3.0, &mut c), PhStatus::Ok);
        assert_eq!(ph_curvature_constants(c, &mut k), PhStatus::Ok);
        assert!(k.pseudo_einstein);
        ph_curvature_free(c);
        assert_eq!(ph_torsion_model_new(1, -3.0, &mut c), PhStatus::InvalidArgument);
    }
}

#[test]
fn flat_model_has_no_c0_prime() {
    let m = model("heisenberg", &[2]).unwrap();
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(ph_model_curvature(m, &mut c), PhStatus::Ok);
        let mut k = PhConstants::default();
        assert_eq!(ph_curvature_constants(c, &mut k), PhStatus::Ok);
        assert!(k.c0_prime.is_nan());
        assert_eq!(k.scalar, 0.0);
        ph_curvature_free(c);
        ph_model_free(m);
    }
}

fn run_json(config: &str) -> (PhStatus, String, i32) {
    let cfg = CString::new(config).unwrap();
    let mut report = ptr::null_mut();
    let mut exit = -1;
    let st = unsafe { ph_run_json(cfg.as_ptr(), &mut report, &mut exit) };
    let text = if report.is_null() {
        String::new()
    } else {
        let s = unsafe { CStr::from_ptr(report) }.to_string_lossy().into_owned();
        unsafe { ph_string_free(report) };
        s
    };
    (st, text, exit)
}

#[test]
fn reports_through_json() {
    let (st, text, exit) = run_json(r#"{"command":"table"}"#);
    assert_eq!((st, exit), (PhStatus::Ok, 0));
    assert!(text.contains("\"schema_version\": \"1\""));
    let cfg = r#"{"command":"verify","seeds":[3],"dim_pairs":[[2,2]]}"#;
    assert_eq!(run_json(cfg).2, 0);
    let neg = r#"{"command":"verify","seeds":[3],"dim_pairs":[[2,2]],"negative_control":true}"#;
    assert_eq!(run_json(neg).2, 1);
    assert_eq!(run_json("{not json").0, PhStatus::InvalidArgument);
    assert_eq!(run_json(r#"{"command":"model","tolerance":-1}"#).0, PhStatus::InvalidArgument);
}

#[test]
fn version_is_reported() {
    let v = unsafe { CStr::from_ptr(ph_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
