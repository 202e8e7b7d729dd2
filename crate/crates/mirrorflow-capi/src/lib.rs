//! C ABI for the mirrorflow library.
//!
//! Conventions:
//! - Handles are opaque pointers created by `mf_*_from_json` constructors
//!   and released by the matching `mf_*_free`; freeing a null pointer is a
//!   no-op.
//! - Every function returns an `MfStatus`; anything other than `MF_STATUS_OK`
//!   leaves a human-readable message retrievable via `mf_last_error` (the
//!   message is thread-local).
//! - Vectors are caller-allocated `double` buffers with explicit lengths;
//!   matrices are row-major.
//! - Panics never unwind across the boundary; they surface as
//!   `MF_STATUS_PANIC`.
//!
//! The committed C header `include/mirrorflow.h` is generated from this
//! file; regenerate it by building the crate (the build script runs
//! cbindgen).

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int, c_longlong};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use mirrorflow::config::{build_potential, PotentialCfg};
use mirrorflow::legendre::{bregman, LegendreFunction};
use mirrorflow::param::{builtin, FamilySpec, Parametrization};
use mirrorflow::{bias, flows, ode, runner, Error};

/// Status codes returned by every API function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DomainViolation = 4,
    BlowUp = 5,
    NonConvergence = 6,
    NotRegular = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque parametrization handle: a built-in family plus its declarative
/// spec (kept so induced potentials can be derived from it).
pub struct MfParametrization {
    spec: FamilySpec,
    g: Box<dyn Parametrization>,
}

/// Opaque Legendre-function handle.
pub struct MfLegendre {
    f: LegendreFunction,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).expect("NULs stripped");
    });
}

fn status_of(err: &Error) -> MfStatus {
    match err {
        Error::DomainViolation { .. } => MfStatus::DomainViolation,
        Error::BlowUp { .. } | Error::PsiBlowUp { .. } => MfStatus::BlowUp,
        Error::StepExhausted { .. } | Error::NewtonNonConvergence { .. } => {
            MfStatus::NonConvergence
        }
        Error::NonFinite { .. } => MfStatus::InvalidArgument,
        Error::DimensionMismatch(_) => MfStatus::DimensionMismatch,
        Error::InvalidArgument(_) => MfStatus::InvalidArgument,
        Error::NotRegular { .. } => MfStatus::NotRegular,
        Error::Config(_) => MfStatus::Config,
        Error::Io(_) => MfStatus::Io,
    }
}

fn fail(err: Error) -> MfStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Run `body` with panic containment; `body` returns a status itself.
fn guarded<F: FnOnce() -> MfStatus>(body: F) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".to_string());
            set_error(&msg);
            MfStatus::Panic
        }
    }
}

macro_rules! require_nonnull {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!($name, " is null"));
            return MfStatus::NullPointer;
        }
    };
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, MfStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("{name} is not valid UTF-8"));
            Err(MfStatus::InvalidArgument)
        }
    }
}

unsafe fn vec_arg(ptr: *const f64, len: usize) -> DVector<f64> {
    DVector::from_column_slice(std::slice::from_raw_parts(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// excluding the terminator, regardless of truncation; call with cap 0 to
/// size a buffer.
#[no_mangle]
pub unsafe extern "C" fn mf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Build a parametrization from a JSON spec, e.g.
/// `{"family":"uv_square","d":4}` or `{"family":"uut","d":2,"r":1}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_parametrization_from_json(
    spec_json: *const c_char,
    out: *mut *mut MfParametrization,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(spec_json, "spec_json");
        require_nonnull!(out, "out");
        let text = match str_arg(spec_json, "spec_json") {
            Ok(s) => s,
            Err(code) => return code,
        };
        let spec: FamilySpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => {
                set_error(&format!("cannot parse parametrization spec: {e}"));
                return MfStatus::Config;
            }
        };
        match builtin(&spec) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(MfParametrization { spec, g }));
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a parametrization handle (null is a no-op).
///
/// # Safety
/// `h` must be a pointer returned by `mf_parametrization_from_json`.
#[no_mangle]
pub unsafe extern "C" fn mf_parametrization_free(h: *mut MfParametrization) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Report the x-space and w-space dimensions of a parametrization.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_parametrization_dims(
    h: *const MfParametrization,
    dim_x: *mut usize,
    dim_w: *mut usize,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(dim_x, "dim_x");
        require_nonnull!(dim_w, "dim_w");
        *dim_x = (*h).g.dim_x();
        *dim_w = (*h).g.dim_w();
        MfStatus::Ok
    })
}

/// Evaluate w = G(x). `x` has length dim_x, `w_out` length dim_w.
///
/// # Safety
/// Buffers must match the declared lengths.
#[no_mangle]
pub unsafe extern "C" fn mf_parametrization_eval(
    h: *const MfParametrization,
    x: *const f64,
    x_len: usize,
    w_out: *mut f64,
    w_len: usize,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(x, "x");
        require_nonnull!(w_out, "w_out");
        let g = &(*h).g;
        if x_len != g.dim_x() || w_len != g.dim_w() {
            set_error(&format!(
                "eval buffers: got x_len {x_len}, w_len {w_len}; family needs {} and {}",
                g.dim_x(),
                g.dim_w()
            ));
            return MfStatus::DimensionMismatch;
        }
        let w = g.eval(&vec_arg(x, x_len));
        std::ptr::copy_nonoverlapping(w.as_slice().as_ptr(), w_out, w_len);
        MfStatus::Ok
    })
}

/// Build a Legendre function from a JSON potential spec, e.g.
/// `{"kind":"hypentropy","u0":[0.5,0.5],"v0":[0.5,0.5]}` or
/// `{"kind":"entropy","x0":[1.0,1.0]}`. For `{"kind":"induced"}`, pass the
/// parametrization handle and its initialization; standalone kinds accept
/// null for both.
///
/// # Safety
/// `potential_json` and `out` must be valid; `x_init` must have `x_len`
/// readable doubles when non-null.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_from_json(
    potential_json: *const c_char,
    param: *const MfParametrization,
    x_init: *const f64,
    x_len: usize,
    out: *mut *mut MfLegendre,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(potential_json, "potential_json");
        require_nonnull!(out, "out");
        let text = match str_arg(potential_json, "potential_json") {
            Ok(s) => s,
            Err(code) => return code,
        };
        let pot: PotentialCfg = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => {
                set_error(&format!("cannot parse potential spec: {e}"));
                return MfStatus::Config;
            }
        };
        let family = if param.is_null() {
            None
        } else {
            Some(&(*param).spec)
        };
        let x0 = if x_init.is_null() {
            DVector::zeros(0)
        } else {
            vec_arg(x_init, x_len)
        };
        match build_potential(&pot, family, &x0) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(MfLegendre { f }));
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a Legendre handle (null is a no-op).
///
/// # Safety
/// `h` must be a pointer returned by `mf_legendre_from_json`.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_free(h: *mut MfLegendre) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Dimension of the Legendre function's primal space.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_dim(h: *const MfLegendre, d: *mut usize) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(d, "d");
        *d = (*h).f.dim();
        MfStatus::Ok
    })
}

unsafe fn legendre_scalar(
    h: *const MfLegendre,
    w: *const f64,
    len: usize,
    out: *mut f64,
    eval: impl Fn(&LegendreFunction, &DVector<f64>) -> mirrorflow::Result<f64>,
) -> MfStatus {
    require_nonnull!(h, "handle");
    require_nonnull!(w, "w");
    require_nonnull!(out, "out");
    let f = &(*h).f;
    if len != f.dim() {
        set_error(&format!("w has length {len}, potential has dimension {}", f.dim()));
        return MfStatus::DimensionMismatch;
    }
    match eval(f, &vec_arg(w, len)) {
        Ok(v) => {
            *out = v;
            MfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// R(w).
///
/// # Safety
/// Buffers must match the potential's dimension.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_value(
    h: *const MfLegendre,
    w: *const f64,
    len: usize,
    out: *mut f64,
) -> MfStatus {
    guarded(|| legendre_scalar(h, w, len, out, |f, w| f.r_value(w)))
}

/// grad R(w), written to `out` (length = dimension).
///
/// # Safety
/// Buffers must match the potential's dimension.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_grad(
    h: *const MfLegendre,
    w: *const f64,
    len: usize,
    out: *mut f64,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(w, "w");
        require_nonnull!(out, "out");
        let f = &(*h).f;
        if len != f.dim() {
            set_error(&format!("w has length {len}, potential has dimension {}", f.dim()));
            return MfStatus::DimensionMismatch;
        }
        match f.grad_r(&vec_arg(w, len)) {
            Ok(gv) => {
                std::ptr::copy_nonoverlapping(gv.as_slice().as_ptr(), out, len);
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Bregman divergence D_R(w, w_ref).
///
/// # Safety
/// Both vectors must have the potential's dimension.
#[no_mangle]
pub unsafe extern "C" fn mf_legendre_bregman(
    h: *const MfLegendre,
    w: *const f64,
    w_ref: *const f64,
    len: usize,
    out: *mut f64,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(w, "w");
        require_nonnull!(w_ref, "w_ref");
        require_nonnull!(out, "out");
        let f = &(*h).f;
        if len != f.dim() {
            set_error(&format!("w has length {len}, potential has dimension {}", f.dim()));
            return MfStatus::DimensionMismatch;
        }
        match bregman(f, &vec_arg(w, len), &vec_arg(w_ref, len)) {
            Ok(v) => {
                *out = v;
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Minimum-potential interpolant for Z w = y: writes w* (length d) and the
/// KKT residual. `z` is row-major n x d with n < d.
///
/// # Safety
/// Buffer lengths must match the stated shapes.
#[no_mangle]
pub unsafe extern "C" fn mf_kkt_oracle(
    h: *const MfLegendre,
    z: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    w_out: *mut f64,
    residual_out: *mut f64,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(z, "z");
        require_nonnull!(y, "y");
        require_nonnull!(w_out, "w_out");
        require_nonnull!(residual_out, "residual_out");
        let f = &(*h).f;
        if d != f.dim() {
            set_error(&format!("problem d = {d}, potential has dimension {}", f.dim()));
            return MfStatus::DimensionMismatch;
        }
        let zs = std::slice::from_raw_parts(z, n * d);
        let zm = DMatrix::from_row_slice(n, d, zs);
        let yv = vec_arg(y, n);
        let prob = match bias::RegressionProblem::new(zm, yv) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        match bias::kkt_oracle(f, &prob) {
            Ok(sol) => {
                std::ptr::copy_nonoverlapping(sol.w.as_slice().as_ptr(), w_out, d);
                *residual_out = sol.kkt_residual;
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Integrate gradient flow on x for the regression loss 0.5 ||Z G(x) - y||^2
/// up to `t_final` and write the final w = G(x(t_final)). `z` is row-major
/// n x d. Tolerances <= 0 fall back to 1e-10.
///
/// # Safety
/// Buffer lengths must match the stated shapes.
#[no_mangle]
pub unsafe extern "C" fn mf_gradient_flow_regression(
    h: *const MfParametrization,
    z: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    x_init: *const f64,
    x_len: usize,
    t_final: f64,
    abs_tol: f64,
    rel_tol: f64,
    w_out: *mut f64,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(h, "handle");
        require_nonnull!(z, "z");
        require_nonnull!(y, "y");
        require_nonnull!(x_init, "x_init");
        require_nonnull!(w_out, "w_out");
        let g = &(*h).g;
        if d != g.dim_w() || x_len != g.dim_x() {
            set_error(&format!(
                "shapes: d = {d}, x_len = {x_len}; family needs {} and {}",
                g.dim_w(),
                g.dim_x()
            ));
            return MfStatus::DimensionMismatch;
        }
        let zs = std::slice::from_raw_parts(z, n * d);
        let zm = DMatrix::from_row_slice(n, d, zs);
        let loss = match flows::QuadraticRegressionLoss::new(zm, vec_arg(y, n)) {
            Ok(l) => l,
            Err(e) => return fail(e),
        };
        let schedule = flows::TimeDependentLoss::constant(std::sync::Arc::new(loss));
        let cfg = ode::IntegratorConfig {
            abs_tol: if abs_tol > 0.0 { abs_tol } else { 1e-10 },
            rel_tol: if rel_tol > 0.0 { rel_tol } else { 1e-10 },
            ..ode::IntegratorConfig::default()
        };
        match flows::gradient_flow(g.as_ref(), &schedule, &vec_arg(x_init, x_len), t_final, &cfg)
        {
            Ok(traj) => {
                let w = traj.w.last().expect("trajectory has samples");
                std::ptr::copy_nonoverlapping(w.as_slice().as_ptr(), w_out, d);
                MfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run a config-driven experiment exactly like the CLI would.
/// `subcommand` is one of check-commuting, simulate, equivalence, bias,
/// loop-test, legendre-probe, domain-probe. `out_dir` may be null (the
/// config decides); `seed` < 0 keeps the config's seed. On success
/// `exit_code_out` receives 0 (pass) or 2 (a quantitative check failed);
/// execution errors return a non-Ok status instead.
///
/// # Safety
/// String pointers must be NUL-terminated; `exit_code_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_run_config(
    subcommand: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    seed: c_longlong,
    exit_code_out: *mut c_int,
) -> MfStatus {
    guarded(|| {
        require_nonnull!(subcommand, "subcommand");
        require_nonnull!(config_path, "config_path");
        require_nonnull!(exit_code_out, "exit_code_out");
        let sub = match str_arg(subcommand, "subcommand") {
            Ok(s) => s,
            Err(code) => return code,
        };
        let path = match str_arg(config_path, "config_path") {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let out = if out_dir.is_null() {
            None
        } else {
            match str_arg(out_dir, "out_dir") {
                Ok(s) => Some(PathBuf::from(s)),
                Err(code) => return code,
            }
        };
        let args = runner::RunArgs {
            config: path,
            set: Vec::new(),
            out,
            seed: if seed >= 0 { Some(seed as u64) } else { None },
            jobs: 1,
        };
        let cmd = match sub {
            "check-commuting" => runner::Command::CheckCommuting(args),
            "simulate" => runner::Command::Simulate(args),
            "equivalence" => runner::Command::Equivalence(args),
            "bias" => runner::Command::Bias(args),
            "loop-test" => runner::Command::LoopTest(args),
            "legendre-probe" => runner::Command::LegendreProbe(args),
            "domain-probe" => runner::Command::DomainProbe(args),
            other => {
                set_error(&format!("unknown subcommand {other:?}"));
                return MfStatus::InvalidArgument;
            }
        };
        match runner::execute(&cmd) {
            Ok(true) => {
                *exit_code_out = runner::EXIT_PASS;
                MfStatus::Ok
            }
            Ok(false) => {
                *exit_code_out = runner::EXIT_CHECK_FAILED;
                MfStatus::Ok
            }
            Err(e) => {
                *exit_code_out = runner::EXIT_EXEC_ERROR;
                fail(e)
            }
        }
    })
}
