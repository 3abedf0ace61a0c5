use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use lowrank_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { lr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn ensemble_round_trip_satisfies_adjoint_identity() {
    let mut ens = ptr::null_mut();
    assert_eq!(unsafe { lr_ensemble_new(LrEnsembleKind::Bilinear, 4, 3, 20.0, 7, &mut ens) }, LrStatus::Ok);
    let m = unsafe { lr_ensemble_m(ens) };
    assert_eq!(m, 20);
    let mat: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let v: Vec<f64> = (0..m).map(|i| (i as f64 * 0.11).cos()).collect();
    let mut am = vec![0.0; m];
    let mut adj = vec![0.0; 12];
    assert_eq!(unsafe { lr_ensemble_apply(ens, mat.as_ptr(), 12, am.as_mut_ptr(), m) }, LrStatus::Ok);
    assert_eq!(unsafe { lr_ensemble_adjoint(ens, v.as_ptr(), m, adj.as_mut_ptr(), 12) }, LrStatus::Ok);
    let lhs: f64 = am.iter().zip(&v).map(|(a, b)| a * b).sum();
    let rhs: f64 = mat.iter().zip(&adj).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    unsafe { lr_ensemble_free(ens) };
}

#[test]
fn errors_set_codes_and_messages() {
    let mut ens = ptr::null_mut();
    let s = unsafe { lr_ensemble_new(LrEnsembleKind::QuadraticI, 4, 3, 20.0, 7, &mut ens) };
    assert_eq!(s, LrStatus::DimensionMismatch);
    assert!(ens.is_null());
    assert!(last_error().contains("d1 = d2"));

    assert_eq!(unsafe { lr_ensemble_new(LrEnsembleKind::GaussianSensing, 3, 3, 5.0, 1, &mut ens) }, LrStatus::Ok);
    let mut small = [0.0; 2];
    let mat = [0.0; 9];
    let s = unsafe { lr_ensemble_apply(ens, mat.as_ptr(), 9, small.as_mut_ptr(), 2) };
    assert_eq!(s, LrStatus::BufferTooSmall);
    let s = unsafe { lr_ensemble_apply(ens, mat.as_ptr(), 8, small.as_mut_ptr(), 2) };
    assert_eq!(s, LrStatus::DimensionMismatch);
    let s = unsafe { lr_ensemble_apply(ptr::null(), mat.as_ptr(), 9, small.as_mut_ptr(), 2) };
    assert_eq!(s, LrStatus::NullPointer);
    unsafe { lr_ensemble_free(ens) };
    unsafe { lr_ensemble_free(ptr::null_mut()) };
}

#[test]
fn polyak_solve_through_handles() {
    let mut inst = ptr::null_mut();
    let s = unsafe { lr_instance_sensing(LrEnsembleKind::QuadraticII, 20, 1, 8.0, 0.1, LrPenalty::ScaledL1, 3, &mut inst) };
    assert_eq!(s, LrStatus::Ok);
    let n = unsafe { lr_instance_point_len(inst) };
    assert_eq!(n, 20);
    let mut truth = vec![0.0; n];
    assert_eq!(unsafe { lr_instance_truth(inst, truth.as_mut_ptr(), n) }, LrStatus::Ok);
    let mut f = f64::NAN;
    assert_eq!(unsafe { lr_instance_objective(inst, truth.as_ptr(), n, &mut f) }, LrStatus::Ok);
    assert!(f > 0.0, "outliers make the truth's objective positive");

    let mut x0 = vec![0.0; n];
    assert_eq!(unsafe { lr_initialize(inst, 0.3, 5, x0.as_mut_ptr(), n) }, LrStatus::Ok);
    let spec = LrSolverSpec {
        method: LrMethod::Polyak,
        max_iters: 500,
        stop_rel_error: 1e-6,
        lambda: 0.0,
        q: 0.0,
        step_penalty: LrStepPenalty::Quadratic,
        p1: 0.0,
        p2: 0.0,
        harmonic_subproblems: 0,
    };
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { lr_solve(inst, &spec, x0.as_ptr(), n, &mut trace) }, LrStatus::Ok);
    let mut status = LrTraceStatus::MaxIters;
    assert_eq!(unsafe { lr_trace_status(trace, &mut status) }, LrStatus::Ok);
    assert_eq!(status, LrTraceStatus::Converged);
    let len = unsafe { lr_trace_len(trace) };
    let mut rec = LrTraceRecord::default();
    assert_eq!(unsafe { lr_trace_record(trace, len - 1, &mut rec) }, LrStatus::Ok);
    assert!(rec.rel_error < 1e-6 && rec.k as usize == len - 1);
    assert_eq!(unsafe { lr_trace_record(trace, len, &mut rec) }, LrStatus::InvalidArgument);

    let mut x = vec![0.0; n];
    assert_eq!(unsafe { lr_trace_final_point(trace, x.as_mut_ptr(), n) }, LrStatus::Ok);
    let mut dist = f64::NAN;
    assert_eq!(unsafe { lr_procrustes_distance(x.as_ptr(), truth.as_ptr(), 20, 1, &mut dist) }, LrStatus::Ok);
    let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dist <= 1e-5 * norm);
    unsafe {
        lr_trace_free(trace);
        lr_instance_free(inst);
    }
}

#[test]
fn invalid_solver_spec_is_rejected() {
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { lr_instance_matcomp(10, 1, 0.5, LrPenalty::Frobenius, 2, &mut inst) }, LrStatus::Ok);
    let n = unsafe { lr_instance_point_len(inst) };
    let mut x0 = vec![0.0; n];
    assert_eq!(unsafe { lr_initialize(inst, 0.2, 1, x0.as_mut_ptr(), n) }, LrStatus::Ok);
    let spec = LrSolverSpec {
        method: LrMethod::Geometric,
        max_iters: 0,
        stop_rel_error: 1e-5,
        lambda: 1.0,
        q: 0.9,
        step_penalty: LrStepPenalty::Quadratic,
        p1: 1.0,
        p2: 0.0,
        harmonic_subproblems: 0,
    };
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { lr_solve(inst, &spec, x0.as_ptr(), n, &mut trace) }, LrStatus::InvalidArgument);
    assert!(trace.is_null());
    assert!(last_error().contains("max_iters"));
    unsafe { lr_instance_free(inst) };
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lowrank.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "lr_last_error_message",
        "lr_ensemble_new",
        "lr_ensemble_apply",
        "lr_ensemble_adjoint",
        "lr_ensemble_free",
        "lr_instance_sensing",
        "lr_instance_matcomp",
        "lr_instance_rpca",
        "lr_solve",
        "lr_trace_record",
        "lr_trace_free",
        "lr_procrustes_distance",
        "LR_STATUS_OK",
        "typedef struct LrInstance LrInstance",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

/// Compiles and runs a C program against the header and the static library when a
/// C compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let Some(lib) = exe.ancestors().skip(1).take(2).map(|d| d.join("liblowrank_ffi.a")).find(|p| p.exists()) else {
        eprintln!("static library not found; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "lowrank.h"
int main(void) {
    LrEnsemble *ens = NULL;
    if (lr_ensemble_new(LR_ENSEMBLE_KIND_QUADRATIC_I, 3, 3, 10.0, 1, &ens) != LR_STATUS_OK) return 1;
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    double out[10];
    if (lr_ensemble_apply(ens, m, 9, out, 10) != LR_STATUS_OK) return 2;
    lr_ensemble_free(ens);
    if (lr_ensemble_new(LR_ENSEMBLE_KIND_QUADRATIC_I, 3, 2, 10.0, 1, &ens) != LR_STATUS_DIMENSION_MISMATCH) return 3;
    char msg[128];
    if (lr_last_error_message(msg, sizeof msg) == 0) return 4;
    printf("%s\n", msg);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = header().parent().unwrap().to_path_buf();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).contains("d1 = d2"));
}
