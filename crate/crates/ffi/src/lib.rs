//! C ABI over `lowrank`.
//!
//! Handles are opaque pointers owned by the caller and released with the matching
//! `*_free` function. Every fallible call returns an [`LrStatus`]; on failure the
//! message is available from [`lr_last_error_message`] on the same thread.
//!
//! Matrices cross the boundary as column-major `double` arrays. A point is the
//! concatenation of its blocks (`X`, then `Y` or `S`), see [`lr_instance_point_len`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lowrank::problems::{matcomp_instance, rpca_l1_instance, sensing_instance, SensingSpec};
use lowrank::regularity::dist_procrustes;
use lowrank::solvers::SubproblemRule;
use lowrank::{
    geometric, initialize, make_ensemble, polyak, prox_linear, DenseNoise, EnsembleKind, Error, MeasurementEnsemble,
    PenaltyKind, ProblemInstance, SolveTrace, SolverConfig, StepPenalty, TraceStatus,
};
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrEnsembleKind {
    GaussianSensing = 0,
    QuadraticI = 1,
    QuadraticII = 2,
    Bilinear = 3,
    EntrywiseMask = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrPenalty {
    ScaledL1 = 0,
    ScaledL2 = 1,
    Frobenius = 2,
    SquaredL2 = 3,
    EntrywiseL1 = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrMethod {
    Polyak = 0,
    Geometric = 1,
    ProxLinear = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrStepPenalty {
    /// `(p1 / 2) ||.||^2`
    Quadratic = 0,
    /// `p1 ||.||^2 + p2 ||.||`
    QuadPlusLinear = 1,
    /// `(1 / 2 p1) ||.||_{2,1}^2`
    RowNormSquared = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrTraceStatus {
    Converged = 0,
    MaxIters = 1,
    Stalled = 2,
}

/// Solver selection and parameters. Fields unused by `method` are ignored.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LrSolverSpec {
    pub method: LrMethod,
    /// Number of iterates the solver may visit, including `x0`.
    pub max_iters: usize,
    pub stop_rel_error: f64,
    /// Geometric initial step.
    pub lambda: f64,
    /// Geometric decay factor in `(0, 1)`.
    pub q: f64,
    pub step_penalty: LrStepPenalty,
    pub p1: f64,
    pub p2: f64,
    /// Nonzero selects the `scale / 2k` subproblem tolerance schedule.
    pub harmonic_subproblems: u8,
}

/// One recorded iteration.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LrTraceRecord {
    pub k: u64,
    pub objective: f64,
    pub rel_error: f64,
    pub distance: f64,
    /// NaN when no step was taken.
    pub step: f64,
    pub elapsed: f64,
}

pub struct LrEnsemble(MeasurementEnsemble);
pub struct LrInstance(ProblemInstance);
pub struct LrTrace(SolveTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(LrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        let status = match e {
            Error::DimensionMismatch(_) => LrStatus::DimensionMismatch,
            Error::InvalidArgument(_) => LrStatus::InvalidArgument,
            Error::Config(_) => LrStatus::Config,
            Error::Io { .. } => LrStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: LrStatus, msg: &str) -> Result<T, Fail> {
    Err(Fail(status, msg.to_string()))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> LrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            LrStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from the matching constructor.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(LrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return fail(LrStatus::NullPointer, &format!("{what} is null"));
    }
    // SAFETY: the caller guarantees `len` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn output(p: *mut f64, len: usize, src: &[f64]) -> Result<(), Fail> {
    if p.is_null() {
        return fail(LrStatus::NullPointer, "output buffer is null");
    }
    if len < src.len() {
        return Err(Fail(LrStatus::BufferTooSmall, format!("output needs {} doubles, got {len}", src.len())));
    }
    // SAFETY: the caller guarantees `len >= src.len()` writable doubles.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), p, src.len()) };
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return fail(LrStatus::NullPointer, "output handle is null");
    }
    // SAFETY: `out` is a valid location for one pointer.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in `store`.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn ensemble_kind(k: LrEnsembleKind) -> EnsembleKind {
    match k {
        LrEnsembleKind::GaussianSensing => EnsembleKind::GaussianSensing,
        LrEnsembleKind::QuadraticI => EnsembleKind::QuadraticI,
        LrEnsembleKind::QuadraticII => EnsembleKind::QuadraticII,
        LrEnsembleKind::Bilinear => EnsembleKind::Bilinear,
        LrEnsembleKind::EntrywiseMask => EnsembleKind::EntrywiseMask,
    }
}

fn penalty_kind(p: LrPenalty) -> PenaltyKind {
    match p {
        LrPenalty::ScaledL1 => PenaltyKind::ScaledL1,
        LrPenalty::ScaledL2 => PenaltyKind::ScaledL2,
        LrPenalty::Frobenius => PenaltyKind::Frobenius,
        LrPenalty::SquaredL2 => PenaltyKind::SquaredL2,
        LrPenalty::EntrywiseL1 => PenaltyKind::EntrywiseL1,
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `len - 1` bytes) and returns the full message length, or 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: `n + 1 <= len` bytes are writable.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Builds an ensemble with Gaussian sampling data. `m_or_p` is the measurement count,
/// or the observation probability for masks.
///
/// # Safety
/// `out` must be a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn lr_ensemble_new(
    kind: LrEnsembleKind,
    d1: usize,
    d2: usize,
    m_or_p: f64,
    seed: u64,
    out: *mut *mut LrEnsemble,
) -> LrStatus {
    guard(|| {
        let ens = make_ensemble(ensemble_kind(kind), d1, d2, m_or_p, seed)?;
        unsafe { store(out, LrEnsemble(ens)) }
    })
}

/// Number of measurements, or 0 for a null handle.
///
/// # Safety
/// `ens` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn lr_ensemble_m(ens: *const LrEnsemble) -> usize {
    unsafe { ens.as_ref() }.map_or(0, |e| e.0.m())
}

/// `out[i] = A(M)_i` for a column-major `d1 x d2` matrix `mat`.
///
/// # Safety
/// `mat` holds `mat_len` doubles; `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lr_ensemble_apply(
    ens: *const LrEnsemble,
    mat: *const f64,
    mat_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LrStatus {
    guard(|| {
        let ens = unsafe { href(ens, "ensemble") }?;
        let (d1, d2) = ens.0.dims();
        let data = unsafe { input(mat, mat_len, "matrix") }?;
        if data.len() != d1 * d2 {
            return fail(LrStatus::DimensionMismatch, "matrix length differs from d1 * d2");
        }
        let v = ens.0.apply(&DMatrix::from_column_slice(d1, d2, data))?;
        unsafe { output(out, out_len, v.as_slice()) }
    })
}

/// Column-major `A*(v)`.
///
/// # Safety
/// `v` holds `v_len` doubles; `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lr_ensemble_adjoint(
    ens: *const LrEnsemble,
    v: *const f64,
    v_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LrStatus {
    guard(|| {
        let ens = unsafe { href(ens, "ensemble") }?;
        let v = unsafe { input(v, v_len, "vector") }?;
        let mat = ens.0.adjoint(&DVector::from_column_slice(v))?;
        unsafe { output(out, out_len, mat.as_slice()) }
    })
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lr_ensemble_free(ens: *mut LrEnsemble) {
    unsafe { release(ens) }
}

/// Sensing instance with `m = m_multiplier * r * d` measurements and additive Gaussian outliers.
///
/// # Safety
/// `out` must be a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_sensing(
    kind: LrEnsembleKind,
    d: usize,
    r: usize,
    m_multiplier: f64,
    p_fail: f64,
    penalty: LrPenalty,
    seed: u64,
    out: *mut *mut LrInstance,
) -> LrStatus {
    guard(|| {
        let mut spec = SensingSpec::with_multiplier(ensemble_kind(kind), d, r, m_multiplier);
        spec.p_fail = p_fail;
        spec.penalty = penalty_kind(penalty);
        let inst = sensing_instance(&spec, seed)?;
        unsafe { store(out, LrInstance(inst)) }
    })
}

/// Matrix completion with observation probability `p`.
///
/// # Safety
/// `out` must be a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_matcomp(
    d: usize,
    r: usize,
    p: f64,
    penalty: LrPenalty,
    seed: u64,
    out: *mut *mut LrInstance,
) -> LrStatus {
    guard(|| {
        let inst = matcomp_instance(d, r, p, None, penalty_kind(penalty), DenseNoise::None, seed)?;
        unsafe { store(out, LrInstance(inst)) }
    })
}

/// Robust PCA with the entrywise l1 loss, corruption rate `tau` and unit Gaussian corruption.
///
/// # Safety
/// `out` must be a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_rpca(d: usize, r: usize, tau: f64, seed: u64, out: *mut *mut LrInstance) -> LrStatus {
    guard(|| {
        let inst = rpca_l1_instance(d, r, tau, 1.0, 2.0, seed)?;
        unsafe { store(out, LrInstance(inst)) }
    })
}

/// Number of doubles in a point of this instance, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_point_len(inst: *const LrInstance) -> usize {
    unsafe { inst.as_ref() }.map_or(0, |i| i.0.truth.point.len())
}

/// Number of measurements, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_m(inst: *const LrInstance) -> usize {
    unsafe { inst.as_ref() }.map_or(0, |i| i.0.m())
}

/// Writes the ground-truth point.
///
/// # Safety
/// `out` has room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_truth(inst: *const LrInstance, out: *mut f64, out_len: usize) -> LrStatus {
    guard(|| {
        let inst = unsafe { href(inst, "instance") }?;
        unsafe { output(out, out_len, inst.0.truth.point.to_vector().as_slice()) }
    })
}

/// Objective value at `x`.
///
/// # Safety
/// `x` holds `x_len` doubles; `out` points to one writable double.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_objective(
    inst: *const LrInstance,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
) -> LrStatus {
    guard(|| {
        let inst = unsafe { href(inst, "instance") }?;
        let pt = point_from(&inst.0, unsafe { input(x, x_len, "point") }?)?;
        let f = inst.0.objective(&pt)?;
        unsafe { output(out, 1, &[f]) }
    })
}

/// Subgradient at `x`, written in the point layout.
///
/// # Safety
/// `x` holds `x_len` doubles; `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_subgradient(
    inst: *const LrInstance,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LrStatus {
    guard(|| {
        let inst = unsafe { href(inst, "instance") }?;
        let pt = point_from(&inst.0, unsafe { input(x, x_len, "point") }?)?;
        let g = inst.0.subgradient(&pt)?;
        unsafe { output(out, out_len, g.to_vector().as_slice()) }
    })
}

/// Perturbed truth `X_sharp + delta ||X_sharp||_F G / ||G||_F`.
///
/// # Safety
/// `out` has room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lr_initialize(
    inst: *const LrInstance,
    delta: f64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> LrStatus {
    guard(|| {
        let inst = unsafe { href(inst, "instance") }?;
        let x0 = initialize(&inst.0.truth.point, delta, seed)?;
        unsafe { output(out, out_len, x0.to_vector().as_slice()) }
    })
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lr_instance_free(inst: *mut LrInstance) {
    unsafe { release(inst) }
}

fn point_from(inst: &ProblemInstance, v: &[f64]) -> Result<lowrank::Point, Fail> {
    if v.len() != inst.truth.point.len() {
        return Err(Fail(
            LrStatus::DimensionMismatch,
            format!("point needs {} doubles, got {}", inst.truth.point.len(), v.len()),
        ));
    }
    Ok(inst.truth.point.with_coordinates(v))
}

fn step_penalty(spec: &LrSolverSpec) -> StepPenalty {
    match spec.step_penalty {
        LrStepPenalty::Quadratic => StepPenalty::Quadratic { beta: spec.p1 },
        LrStepPenalty::QuadPlusLinear => StepPenalty::QuadPlusLinear { a: spec.p1, b: spec.p2 },
        LrStepPenalty::RowNormSquared => StepPenalty::RowNormSquared { gamma: spec.p1 },
    }
}

/// Runs a solver from `x0` and returns the trace.
///
/// # Safety
/// `spec` points to a valid spec, `x0` holds `x0_len` doubles, `out` is a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn lr_solve(
    inst: *const LrInstance,
    spec: *const LrSolverSpec,
    x0: *const f64,
    x0_len: usize,
    out: *mut *mut LrTrace,
) -> LrStatus {
    guard(|| {
        let inst = unsafe { href(inst, "instance") }?;
        let spec = unsafe { href(spec, "solver spec") }?;
        let x0 = point_from(&inst.0, unsafe { input(x0, x0_len, "x0") }?)?;
        let mut cfg = SolverConfig::new(spec.max_iters);
        cfg.stop_rel_error = spec.stop_rel_error;
        if spec.harmonic_subproblems != 0 {
            cfg.subproblem = SubproblemRule::harmonic();
        }
        cfg.validate()?;
        let trace = match spec.method {
            LrMethod::Polyak => polyak(&inst.0, &x0, &cfg)?,
            LrMethod::Geometric => geometric(&inst.0, &x0, spec.lambda, spec.q, &cfg)?,
            LrMethod::ProxLinear => prox_linear(&inst.0, &x0, &step_penalty(spec), &cfg)?,
        };
        unsafe { store(out, LrTrace(trace)) }
    })
}

/// Number of recorded iterations, or 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn lr_trace_len(trace: *const LrTrace) -> usize {
    unsafe { trace.as_ref() }.map_or(0, |t| t.0.records.len())
}

/// # Safety
/// `trace` must be a live trace handle and `out` a writable record.
#[no_mangle]
pub unsafe extern "C" fn lr_trace_record(trace: *const LrTrace, index: usize, out: *mut LrTraceRecord) -> LrStatus {
    guard(|| {
        let trace = unsafe { href(trace, "trace") }?;
        let Some(r) = trace.0.records.get(index) else {
            return fail(LrStatus::InvalidArgument, "record index out of range");
        };
        if out.is_null() {
            return fail(LrStatus::NullPointer, "output record is null");
        }
        let rec = LrTraceRecord {
            k: r.k as u64,
            objective: r.objective,
            rel_error: r.rel_error,
            distance: r.distance,
            step: r.step,
            elapsed: r.elapsed,
        };
        // SAFETY: `out` is non-null and writable per the contract.
        unsafe { *out = rec };
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live trace handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_trace_status(trace: *const LrTrace, out: *mut LrTraceStatus) -> LrStatus {
    guard(|| {
        let trace = unsafe { href(trace, "trace") }?;
        if out.is_null() {
            return fail(LrStatus::NullPointer, "output status is null");
        }
        let s = match trace.0.status {
            TraceStatus::Converged => LrTraceStatus::Converged,
            TraceStatus::MaxIters => LrTraceStatus::MaxIters,
            TraceStatus::Stalled => LrTraceStatus::Stalled,
        };
        // SAFETY: `out` is non-null and writable per the contract.
        unsafe { *out = s };
        Ok(())
    })
}

/// Writes the last iterate.
///
/// # Safety
/// `out` has room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lr_trace_final_point(trace: *const LrTrace, out: *mut f64, out_len: usize) -> LrStatus {
    guard(|| {
        let trace = unsafe { href(trace, "trace") }?;
        unsafe { output(out, out_len, trace.0.final_point.to_vector().as_slice()) }
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lr_trace_free(trace: *mut LrTrace) {
    unsafe { release(trace) }
}

/// `min_R ||X - X_sharp R||_F` over orthogonal `R`, for column-major `d x r` inputs.
///
/// # Safety
/// `x` and `x_sharp` hold `d * r` doubles; `out` points to one writable double.
#[no_mangle]
pub unsafe extern "C" fn lr_procrustes_distance(
    x: *const f64,
    x_sharp: *const f64,
    d: usize,
    r: usize,
    out: *mut f64,
) -> LrStatus {
    guard(|| {
        let n = d.checked_mul(r).ok_or_else(|| Fail(LrStatus::InvalidArgument, "d * r overflows".into()))?;
        let a = DMatrix::from_column_slice(d, r, unsafe { input(x, n, "x") }?);
        let b = DMatrix::from_column_slice(d, r, unsafe { input(x_sharp, n, "x_sharp") }?);
        let dist = dist_procrustes(&a, &b)?;
        unsafe { output(out, 1, &[dist]) }
    })
}
