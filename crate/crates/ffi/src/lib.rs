//! C interface to the equilibrium solver.
//!
//! Every function returns an [`FsieqStatus`]; on failure the message is kept
//! per thread and can be read with [`fsieq_last_error`]. Handles are opaque
//! and must be released with [`fsieq_config_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fsieq::config::{load_config, parse_config, RunConfig};
use fsieq::equilibrium::{self, EquilibriumSetup};
use fsieq::grid::{build_grid, ops, voxelize_body};
use fsieq::run::{run, RunOptions, RunStatus};
use fsieq::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsieqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Parse failure or invalid values.
    Config = 3,
    /// The Picard or linear iteration did not converge.
    NonConvergence = 4,
    /// The run finished but some cases did not converge.
    Partial = 5,
    Io = 6,
    Other = 7,
    Panic = 8,
}

/// Parsed run configuration.
pub struct FsieqConfig {
    inner: RunConfig,
}

/// Result of a single equilibrium solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsieqSummary {
    pub lambda: f64,
    pub theta: f64,
    pub delta: [f64; 3],
    /// Force of the fluid on the body.
    pub force: [f64; 3],
    pub boundary_torque: f64,
    /// ‖∇u‖₂ of the perturbation.
    pub grad_norm: f64,
    pub iterations: u32,
    pub wall_time: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FsieqStatus {
    match e {
        Error::ConfigParse { .. }
        | Error::ConfigInvalid(_)
        | Error::InvalidParams(_)
        | Error::InvalidGrid(_)
        | Error::InvalidBody(_)
        | Error::BodyTooLarge(_)
        | Error::InvalidLifting(_)
        | Error::UnresolvableLayer { .. }
        | Error::InvalidSweep(_) => FsieqStatus::Config,
        Error::OseenNonConvergence(_) | Error::PicardNonConvergence(_) => FsieqStatus::NonConvergence,
        Error::Io(_) => FsieqStatus::Io,
        _ => FsieqStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FsieqStatus, String)>) -> FsieqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsieqStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FsieqStatus::Panic
        }
    }
}

fn lift(e: Error) -> (FsieqStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (FsieqStatus, String)> {
    if p.is_null() {
        return Err((FsieqStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (FsieqStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null(name: &str) -> (FsieqStatus, String) {
    (FsieqStatus::NullArgument, format!("{name} is null"))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsieq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsieq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON configuration. On success `*out` owns a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsieq_config_parse(json: *const c_char, out: *mut *mut FsieqConfig) -> FsieqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config(str_arg(json, "json")?).map_err(lift)?;
        *out = Box::into_raw(Box::new(FsieqConfig { inner: cfg }));
        Ok(())
    })
}

/// Reads and parses a JSON configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsieq_config_load(path: *const c_char, out: *mut *mut FsieqConfig) -> FsieqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_config(&PathBuf::from(str_arg(path, "path")?)).map_err(lift)?;
        *out = Box::into_raw(Box::new(FsieqConfig { inner: cfg }));
        Ok(())
    })
}

/// Checks every field; the error message lists all violations.
///
/// # Safety
/// `cfg` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fsieq_config_validate(cfg: *const FsieqConfig) -> FsieqStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        cfg.inner.validate().map_err(lift)
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsieq_config_free(cfg: *mut FsieqConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured scenario and writes its artifacts. `out_dir` may be
/// null to use the directory named in the configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fsieq_run(cfg: *const FsieqConfig, out_dir: *const c_char, deterministic: bool) -> FsieqStatus {
    let mut partial = false;
    let status = guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = if out_dir.is_null() { None } else { Some(PathBuf::from(str_arg(out_dir, "out_dir")?)) };
        let outcome = run(&cfg.inner, &RunOptions { out, threads: None, deterministic }).map_err(lift)?;
        partial = outcome.status == RunStatus::Partial;
        Ok(())
    });
    if status == FsieqStatus::Ok && partial {
        set_error("some cases did not converge; see the written artifacts");
        return FsieqStatus::Partial;
    }
    status
}

/// Solves one equilibrium at the configured λ and grid without writing files.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsieq_solve_equilibrium(cfg: *const FsieqConfig, out: *mut FsieqSummary) -> FsieqStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        cfg.validate().map_err(lift)?;
        let (r, n) = cfg.single_grid().map_err(lift)?;
        let grid = build_grid(r, n).map_err(lift)?;
        let mask = voxelize_body(&cfg.body, &grid).map_err(lift)?;
        let params = cfg.params_at(cfg.params.lambda).map_err(lift)?;
        let setup = EquilibriumSetup::new(&params, &mask, &cfg.lifting(), &cfg.solver).map_err(lift)?;
        let (state, hist) = equilibrium::solve_with_setup(&setup, &cfg.picard.options(params.lambda)).map_err(lift)?;
        let loads = equilibrium::recover_delta(&setup, &state).map_err(lift)?;
        *out = FsieqSummary {
            lambda: params.lambda,
            theta: state.theta.0,
            delta: loads.delta,
            force: loads.hydrodynamic_force,
            boundary_torque: loads.boundary_torque,
            grad_norm: ops::h1_seminorm(&state.u, &grid),
            iterations: hist.steps.len() as u32,
            wall_time: hist.wall_time,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"scenario":"single_equilibrium","body":{"shape":"sphere","radius":0.5},
        "grid":{"radius":4.0,"n":16},"params":{"lambda":0.05}}"#;

    fn parse(text: &str) -> (FsieqStatus, *mut FsieqConfig) {
        let c = CString::new(text).unwrap();
        let mut h = std::ptr::null_mut();
        let s = unsafe { fsieq_config_parse(c.as_ptr(), &mut h) };
        (s, h)
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(fsieq_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn parse_validate_solve_free() {
        let (s, h) = parse(SMALL);
        assert_eq!(s, FsieqStatus::Ok);
        assert_eq!(unsafe { fsieq_config_validate(h) }, FsieqStatus::Ok);
        let mut sum = FsieqSummary::default();
        assert_eq!(unsafe { fsieq_solve_equilibrium(h, &mut sum) }, FsieqStatus::Ok);
        assert!(sum.theta.abs() < 1e-9, "{sum:?}");
        assert!(sum.force[1] < 0.0 && sum.iterations > 0, "{sum:?}");
        unsafe { fsieq_config_free(h) };
    }

    #[test]
    fn errors_carry_status_and_message() {
        let (s, h) = parse("{\"scenario\": ");
        assert_eq!(s, FsieqStatus::Config);
        assert!(h.is_null());
        assert!(last_error().contains("line"), "{}", last_error());

        let (s, h) = parse(&SMALL.replace("0.5}", "-1.0}"));
        assert_eq!(s, FsieqStatus::Ok);
        assert_eq!(unsafe { fsieq_config_validate(h) }, FsieqStatus::Config);
        assert!(last_error().contains("radius: -1.0"), "{}", last_error());
        unsafe { fsieq_config_free(h) };

        assert_eq!(unsafe { fsieq_config_validate(std::ptr::null()) }, FsieqStatus::NullArgument);
        let bad = [0xffu8, 0];
        let mut out = std::ptr::null_mut();
        assert_eq!(unsafe { fsieq_config_parse(bad.as_ptr().cast(), &mut out) }, FsieqStatus::InvalidUtf8);
        unsafe { fsieq_config_free(std::ptr::null_mut()) };
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let (_, h) = parse(SMALL);
        let out = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(unsafe { fsieq_run(h, out.as_ptr(), true) }, FsieqStatus::Ok);
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("summary.json").exists());
        unsafe { fsieq_config_free(h) };
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(fsieq_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
