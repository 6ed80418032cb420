use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ippgd_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ippgd_last_error()) }.to_string_lossy().into_owned()
}

struct Handles {
    p: *mut IppgdProblem,
    c: *mut IppgdConfig,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            ippgd_config_free(self.c);
            ippgd_problem_free(self.p);
        }
    }
}

fn quadratic(method: IppgdMethod) -> Handles {
    let mut p = ptr::null_mut();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(ippgd_problem_quadratic(16, 4, 5.0, 11, 0.0, &mut p), IppgdStatus::Ok);
        assert_eq!(ippgd_config_new(p, method, &mut c), IppgdStatus::Ok);
    }
    Handles { p, c }
}

#[test]
fn solve_quadratic_roundtrip() {
    let h = quadratic(IppgdMethod::Pgd);
    unsafe {
        assert_eq!(ippgd_problem_dim(h.p), 16);
        assert_eq!(ippgd_config_set_tolerances(h.c, 1e-10, 1e-14), IppgdStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(ippgd_solve(h.p, h.c, &mut r), IppgdStatus::Ok);
        assert_eq!(ippgd_result_status(r), IppgdRunStatus::Converged);
        assert!(ippgd_result_iterations(r) > 0);
        let g = ippgd_result_grad_norm(r);
        assert!(g < 1e-8, "grad {g}");
        let mut small = [0.0; 4];
        assert_eq!(ippgd_result_solution(r, small.as_mut_ptr(), 4), IppgdStatus::BufferTooSmall);
        assert!(last_error().contains("buffer"));
        let mut u = [f64::NAN; 16];
        assert_eq!(ippgd_result_solution(r, u.as_mut_ptr(), 16), IppgdStatus::Ok);
        assert!(u.iter().all(|v| v.is_finite()));
        ippgd_result_free(r);
    }
}

#[test]
fn invalid_tau_is_rejected_and_config_kept() {
    let h = quadratic(IppgdMethod::IppgdvTau);
    unsafe {
        assert_eq!(ippgd_config_set_tau(h.c, 0.0), IppgdStatus::InvalidArgument);
        assert!(last_error().contains("tau must be in (0,1]"), "{}", last_error());
        assert_eq!(ippgd_config_set_max_iters(h.c, 3), IppgdStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(ippgd_solve(h.p, h.c, &mut r), IppgdStatus::Ok);
        assert_eq!(ippgd_result_status(r), IppgdRunStatus::MaxIters);
        ippgd_result_free(r);
    }
}

#[test]
fn null_handles_report_errors() {
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(ippgd_solve(ptr::null(), ptr::null(), &mut r), IppgdStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(ippgd_problem_pde(8, 1.0, 1.0, 5.0, ptr::null_mut()), IppgdStatus::NullPointer);
        assert_eq!(ippgd_problem_dim(ptr::null()), 0);
        ippgd_problem_free(ptr::null_mut());
        ippgd_config_free(ptr::null_mut());
        ippgd_result_free(ptr::null_mut());
    }
}

#[test]
fn toml_configuration_and_errors() {
    let good = CString::new("[problem]\nkind = \"pde\"\ngrid = 8\n[solver]\nmethod = \"IPPGDv\"\n").unwrap();
    let bad = CString::new("[problem]\nkind = \"pde\"\n[solver]\ntau = 0.0\n").unwrap();
    let unknown = CString::new("[problem]\nkind = \"pde\"\nwidth = 3\n").unwrap();
    unsafe {
        let (mut p, mut c) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ippgd_from_toml(good.as_ptr(), &mut p, &mut c), IppgdStatus::Ok);
        let h = Handles { p, c };
        let mut r = ptr::null_mut();
        assert_eq!(ippgd_solve(h.p, h.c, &mut r), IppgdStatus::Ok);
        assert!(ippgd_result_total_cycles(r) > 0);
        ippgd_result_free(r);

        let (mut p, mut c) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ippgd_from_toml(bad.as_ptr(), &mut p, &mut c), IppgdStatus::Parse);
        assert!(last_error().contains("solver.tau"), "{}", last_error());
        assert!(p.is_null() && c.is_null());
        assert_eq!(ippgd_from_toml(unknown.as_ptr(), &mut p, &mut c), IppgdStatus::Parse);
        assert!(last_error().contains("width"), "{}", last_error());
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ippgd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn static_lib() -> Option<PathBuf> {
    // tests/…/deps/capi-xxxx → the profile directory holds the archive
    let exe = std::env::current_exe().ok()?;
    let profile = exe.parent()?.parent()?;
    let lib = profile.join("libippgd_ffi.a");
    lib.exists().then_some(lib)
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_is_generated_and_compiles() {
    let header = crate_dir().join("include/ippgd.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for name in ["ippgd_solve", "ippgd_last_error", "IPPGD_STATUS_OK", "typedef struct IppgdProblem IppgdProblem"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    if !have_cc() {
        eprintln!("cc not found; skipping C compile");
        return;
    }
    let st = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .unwrap();
    assert!(st.success());
}

#[test]
fn c_program_links_against_static_library() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping");
        return;
    };
    if !have_cc() {
        eprintln!("cc not found; skipping");
        return;
    }
    let dir = tempfile_dir();
    let exe = dir.join("smoke");
    let st = Command::new("cc")
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    let _ = std::fs::remove_dir_all(&dir);
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("ippgd-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    assert!(Path::new(&d).is_dir());
    d
}
