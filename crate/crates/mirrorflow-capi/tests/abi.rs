//! Exercises the C entry points exactly as a foreign caller would: raw
//! pointers, explicit lengths, status codes, and the thread-local error
//! message channel.

use std::ffi::{CStr, CString};
use std::os::raw::c_int;
use std::ptr;

use mirrorflow_capi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe {
        let needed = mf_last_error(ptr::null_mut(), 0);
        let mut buf = vec![0i8; needed + 1];
        mf_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn new_param(json: &str) -> *mut MfParametrization {
    let spec = cstr(json);
    let mut h: *mut MfParametrization = ptr::null_mut();
    let st = unsafe { mf_parametrization_from_json(spec.as_ptr(), &mut h) };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());
    assert!(!h.is_null());
    h
}

fn new_legendre(
    json: &str,
    param: *const MfParametrization,
    x_init: &[f64],
) -> *mut MfLegendre {
    let spec = cstr(json);
    let mut h: *mut MfLegendre = ptr::null_mut();
    let (xp, xl) = if x_init.is_empty() {
        (ptr::null(), 0)
    } else {
        (x_init.as_ptr(), x_init.len())
    };
    let st = unsafe { mf_legendre_from_json(spec.as_ptr(), param, xp, xl, &mut h) };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());
    h
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(mf_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.split('.').count() >= 2, "unexpected version {v}");
}

#[test]
fn parametrization_round_trip_and_eval() {
    let h = new_param(r#"{"family":"uv_square","d":2}"#);
    let (mut dx, mut dw) = (0usize, 0usize);
    unsafe {
        assert_eq!(mf_parametrization_dims(h, &mut dx, &mut dw), MfStatus::Ok);
    }
    assert_eq!((dx, dw), (4, 2));

    let x = [0.6, 0.5, 0.4, 0.5];
    let mut w = [0.0f64; 2];
    let st = unsafe { mf_parametrization_eval(h, x.as_ptr(), 4, w.as_mut_ptr(), 2) };
    assert_eq!(st, MfStatus::Ok);
    assert!((w[0] - 0.20).abs() < 1e-15);
    assert!(w[1].abs() < 1e-15);

    unsafe { mf_parametrization_free(h) };
}

#[test]
fn bad_spec_sets_config_status_and_message() {
    let spec = cstr(r#"{"family":"no_such_family"}"#);
    let mut h: *mut MfParametrization = ptr::null_mut();
    let st = unsafe { mf_parametrization_from_json(spec.as_ptr(), &mut h) };
    assert_eq!(st, MfStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("parametrization spec"));
}

#[test]
fn null_pointers_are_rejected() {
    let st = unsafe { mf_parametrization_from_json(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, MfStatus::NullPointer);
    assert!(!last_error().is_empty());
    // Freeing null is a no-op, not a crash.
    unsafe {
        mf_parametrization_free(ptr::null_mut());
        mf_legendre_free(ptr::null_mut());
    }
}

#[test]
fn eval_checks_dimensions() {
    let h = new_param(r#"{"family":"uv_square","d":2}"#);
    let x = [0.5f64; 4];
    let mut w = [0.0f64; 2];
    let st = unsafe { mf_parametrization_eval(h, x.as_ptr(), 3, w.as_mut_ptr(), 2) };
    assert_eq!(st, MfStatus::DimensionMismatch);
    assert!(last_error().contains("x_len 3"));
    unsafe { mf_parametrization_free(h) };
}

#[test]
fn hypentropy_gradient_and_bregman_through_the_abi() {
    let f = new_legendre(
        r#"{"kind":"hypentropy","u0":[0.5],"v0":[0.5]}"#,
        ptr::null(),
        &[],
    );
    let mut d = 0usize;
    unsafe { assert_eq!(mf_legendre_dim(f, &mut d), MfStatus::Ok) };
    assert_eq!(d, 1);

    // The reference point w = u0^2 - v0^2 = 0 zeroes the gradient.
    let w = [0.0f64];
    let mut grad = [1.0f64];
    let st = unsafe { mf_legendre_grad(f, w.as_ptr(), 1, grad.as_mut_ptr()) };
    assert_eq!(st, MfStatus::Ok);
    assert!(grad[0].abs() < 1e-15);

    let (w1, w0) = ([1.0f64], [0.0f64]);
    let mut div = 0.0f64;
    let st =
        unsafe { mf_legendre_bregman(f, w1.as_ptr(), w0.as_ptr(), 1, &mut div) };
    assert_eq!(st, MfStatus::Ok);
    assert!(
        (div - 2.0640037160722885e-1).abs() < 1e-12,
        "D_R(1,0) = {div}"
    );

    unsafe { mf_legendre_free(f) };
}

#[test]
fn entropy_rejects_points_outside_its_domain() {
    let f = new_legendre(r#"{"kind":"entropy","x0":[1.0,1.0]}"#, ptr::null(), &[]);
    let w = [-0.5f64, 1.0];
    let mut grad = [0.0f64; 2];
    let st = unsafe { mf_legendre_grad(f, w.as_ptr(), 2, grad.as_mut_ptr()) };
    assert_eq!(st, MfStatus::DomainViolation);
    assert!(!last_error().is_empty());
    unsafe { mf_legendre_free(f) };
}

#[test]
fn induced_potential_needs_the_parametrization() {
    let spec = cstr(r#"{"kind":"induced"}"#);
    let mut h: *mut MfLegendre = ptr::null_mut();
    let st = unsafe { mf_legendre_from_json(spec.as_ptr(), ptr::null(), ptr::null(), 0, &mut h) };
    assert_eq!(st, MfStatus::Config);

    let g = new_param(r#"{"family":"uv_square","d":2}"#);
    let x0 = [0.5f64, 0.5, 0.5, 0.5];
    let f = new_legendre(r#"{"kind":"induced"}"#, g, &x0);
    let mut d = 0usize;
    unsafe { assert_eq!(mf_legendre_dim(f, &mut d), MfStatus::Ok) };
    assert_eq!(d, 2);
    unsafe {
        mf_legendre_free(f);
        mf_parametrization_free(g);
    }
}

#[test]
fn euclidean_kkt_oracle_matches_the_projection_formula() {
    let f = new_legendre(
        r#"{"kind":"euclidean","w_ref":[0.0,0.0,0.0]}"#,
        ptr::null(),
        &[],
    );
    // min 0.5 ||w||^2 subject to w_1 + w_2 + w_3 = 3 has solution (1,1,1).
    let z = [1.0f64, 1.0, 1.0];
    let y = [3.0f64];
    let mut w = [0.0f64; 3];
    let mut res = 0.0f64;
    let st = unsafe {
        mf_kkt_oracle(f, z.as_ptr(), 1, 3, y.as_ptr(), w.as_mut_ptr(), &mut res)
    };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());
    for wi in w {
        assert!((wi - 1.0).abs() < 1e-9, "w = {w:?}");
    }
    assert!(res < 1e-8);
    unsafe { mf_legendre_free(f) };
}

#[test]
fn gradient_flow_limit_matches_the_oracle_through_the_abi() {
    let g = new_param(r#"{"family":"uv_square","d":2}"#);
    let x0 = [0.5f64, 0.5, 0.5, 0.5];
    let f = new_legendre(r#"{"kind":"induced"}"#, g, &x0);

    let z = [1.0f64, -0.5];
    let y = [0.3f64];
    let mut w_flow = [0.0f64; 2];
    let st = unsafe {
        mf_gradient_flow_regression(
            g,
            z.as_ptr(),
            1,
            2,
            y.as_ptr(),
            x0.as_ptr(),
            4,
            60.0,
            1e-12,
            1e-12,
            w_flow.as_mut_ptr(),
        )
    };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());

    let mut w_star = [0.0f64; 2];
    let mut res = 0.0f64;
    let st = unsafe {
        mf_kkt_oracle(f, z.as_ptr(), 1, 2, y.as_ptr(), w_star.as_mut_ptr(), &mut res)
    };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());
    let gap = ((w_flow[0] - w_star[0]).powi(2) + (w_flow[1] - w_star[1]).powi(2)).sqrt();
    assert!(gap < 1e-6, "flow limit {w_flow:?} vs oracle {w_star:?}");

    unsafe {
        mf_legendre_free(f);
        mf_parametrization_free(g);
    }
}

#[test]
fn run_config_reports_cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        r#"
[scenario]
name = "abi"
t_final = 2.0
seed = 0
tolerance = 1e-6

[parametrization]
family = "uv_square"
d = 2
x_init = [0.5, 0.5, 0.5, 0.5]

[potential]
kind = "induced"

[[loss.segments]]
kind = "quadratic_regression"
start = 0.0
z = [[1.0, -0.5]]
y = [0.3]
"#,
    )
    .unwrap();
    let sub = cstr("equivalence");
    let path = cstr(cfg_path.to_str().unwrap());
    let out = cstr(dir.path().join("artifacts").to_str().unwrap());
    let mut code: c_int = -1;
    let st = unsafe { mf_run_config(sub.as_ptr(), path.as_ptr(), out.as_ptr(), -1, &mut code) };
    assert_eq!(st, MfStatus::Ok, "{}", last_error());
    assert_eq!(code, 0);
    assert!(dir.path().join("artifacts/abi-equivalence.json").exists());

    // Execution error: missing file.
    let missing = cstr("/nonexistent/nope.toml");
    let st = unsafe { mf_run_config(sub.as_ptr(), missing.as_ptr(), out.as_ptr(), -1, &mut code) };
    assert_eq!(st, MfStatus::Config);
    assert_eq!(code, 1);

    // Unknown subcommand.
    let bad = cstr("banana");
    let st = unsafe { mf_run_config(bad.as_ptr(), path.as_ptr(), out.as_ptr(), -1, &mut code) };
    assert_eq!(st, MfStatus::InvalidArgument);
}

#[test]
fn last_error_reports_length_and_truncates() {
    let spec = cstr("not json at all");
    let mut h: *mut MfParametrization = ptr::null_mut();
    unsafe { mf_parametrization_from_json(spec.as_ptr(), &mut h) };
    let full = unsafe { mf_last_error(ptr::null_mut(), 0) };
    assert!(full > 8);
    let mut small = vec![0i8; 8];
    let reported = unsafe { mf_last_error(small.as_mut_ptr(), small.len()) };
    assert_eq!(reported, full);
    let s = unsafe { CStr::from_ptr(small.as_ptr()) };
    assert_eq!(s.to_bytes().len(), 7, "NUL-terminated at the cap");
}

#[test]
fn committed_header_stays_in_sync_with_the_exports() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/mirrorflow.h"
    ))
    .expect("generated header is committed");
    for sym in [
        "mf_version",
        "mf_last_error",
        "mf_parametrization_from_json",
        "mf_parametrization_free",
        "mf_parametrization_dims",
        "mf_parametrization_eval",
        "mf_legendre_from_json",
        "mf_legendre_free",
        "mf_legendre_dim",
        "mf_legendre_value",
        "mf_legendre_grad",
        "mf_legendre_bregman",
        "mf_kkt_oracle",
        "mf_gradient_flow_regression",
        "mf_run_config",
    ] {
        assert!(header.contains(sym), "header is missing {sym}");
    }
    assert!(header.contains("MfStatus"));
    assert!(header.contains("typedef struct MfParametrization MfParametrization;"));
    assert!(header.contains("typedef struct MfLegendre MfLegendre;"));
}
