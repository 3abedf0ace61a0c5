//! Outer iterations: Polyak and geometrically decaying subgradient methods,
//! prox-linear, and projected gradient descent on the smooth formulation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::composite::ProblemInstance;
use crate::error::{invalid, Result};
use crate::point::Point;
use crate::proxsub::{solve_subproblem, StepPenalty, SubproblemOptions};
use crate::rng;

/// Subproblem accuracy schedule for prox-linear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubproblemRule {
    /// `tol = factor * (1 + |f(x_k)|)`.
    Relative { factor: f64, max_iter: usize },
    /// `tol = scale / (2k)` at outer iteration `k >= 1`.
    Harmonic { scale: f64, max_iter: usize },
}

impl Default for SubproblemRule {
    fn default() -> Self {
        SubproblemRule::Relative { factor: 1e-10, max_iter: 2000 }
    }
}

impl SubproblemRule {
    /// Schedule used for robust PCA.
    pub fn harmonic() -> Self {
        SubproblemRule::Harmonic { scale: 1e-4, max_iter: 500 }
    }

    fn options(&self, k: usize, f: f64) -> SubproblemOptions {
        match *self {
            SubproblemRule::Relative { factor, max_iter } => {
                SubproblemOptions { tol: factor * (1.0 + f.abs()), max_iter }
            }
            SubproblemRule::Harmonic { scale, max_iter } => {
                SubproblemOptions { tol: scale / (2.0 * k.max(1) as f64), max_iter }
            }
        }
    }
}

/// Shared solver controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of iterates `x_0, ..., x_{max_iters - 1}` the solver may visit.
    pub max_iters: usize,
    #[serde(default = "default_stop")]
    pub stop_rel_error: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optimal value used by Polyak steps; defaults to the instance's clean optimum.
    #[serde(default)]
    pub min_f: Option<f64>,
    #[serde(default)]
    pub subproblem: SubproblemRule,
    /// Predicted error floor, carried into the trace for plotting.
    #[serde(default)]
    pub plateau_hint: Option<f64>,
}

fn default_stop() -> f64 {
    1e-5
}
fn default_record() -> usize {
    1
}

impl SolverConfig {
    pub fn new(max_iters: usize) -> SolverConfig {
        SolverConfig {
            max_iters,
            stop_rel_error: default_stop(),
            record_every: 1,
            seed: 0,
            min_f: None,
            subproblem: SubproblemRule::default(),
            plateau_hint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.stop_rel_error > 0.0) {
            return Err(invalid("stop_rel_error must be positive"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub objective: f64,
    pub rel_error: f64,
    /// Procrustes distance for symmetric points, blockwise Euclidean otherwise.
    pub distance: f64,
    /// Step size used to leave this iterate (NaN when none was taken).
    pub step: f64,
    pub sub_iters: Option<usize>,
    pub sub_gap: Option<f64>,
    /// Seconds since the solve started.
    pub elapsed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Converged,
    MaxIters,
    /// Zero subgradient (or zero gradient) encountered.
    Stalled,
}

impl TraceStatus {
    pub fn name(self) -> &'static str {
        match self {
            TraceStatus::Converged => "converged",
            TraceStatus::MaxIters => "max-iters",
            TraceStatus::Stalled => "stalled",
        }
    }
}

/// Full history of a solve.
#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    pub final_point: Point,
    /// Number of outer iterations performed.
    pub iterations: usize,
    /// Prox-linear subproblems that hit their iteration cap before the tolerance.
    pub unconverged_subproblems: usize,
    pub plateau_hint: Option<f64>,
}

impl SolveTrace {
    pub fn final_rel_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.rel_error)
    }

    pub fn converged(&self) -> bool {
        self.status == TraceStatus::Converged
    }
}

struct Recorder<'a> {
    inst: &'a ProblemInstance,
    cfg: &'a SolverConfig,
    start: Instant,
    records: Vec<TraceRecord>,
}

impl<'a> Recorder<'a> {
    fn new(inst: &'a ProblemInstance, cfg: &'a SolverConfig) -> Self {
        Recorder { inst, cfg, start: Instant::now(), records: Vec::new() }
    }

    fn push(&mut self, k: usize, x: &Point, f: f64, rel: f64, step: f64, sub: Option<(usize, f64)>, force: bool) {
        if !force && k % self.cfg.record_every != 0 {
            return;
        }
        if self.records.last().is_some_and(|r| r.k == k) {
            return;
        }
        self.records.push(TraceRecord {
            k,
            objective: f,
            rel_error: rel,
            distance: self.inst.distance(x),
            step,
            sub_iters: sub.map(|s| s.0),
            sub_gap: sub.map(|s| s.1),
            elapsed: self.start.elapsed().as_secs_f64(),
        });
    }

    fn finish(self, x: Point, status: TraceStatus, iterations: usize, unconverged: usize) -> SolveTrace {
        SolveTrace {
            records: self.records,
            status,
            final_point: x,
            iterations,
            unconverged_subproblems: unconverged,
            plateau_hint: self.cfg.plateau_hint,
        }
    }
}

const ZERO_SUBGRADIENT: f64 = 1e-14;

/// Shared loop for the two subgradient methods; `step_len(k, f, ||g||)` gives the
/// multiplier applied to the raw subgradient.
fn subgradient_loop(
    inst: &ProblemInstance,
    x0: &Point,
    cfg: &SolverConfig,
    step_len: impl Fn(usize, f64, f64) -> f64,
) -> Result<SolveTrace> {
    cfg.validate()?;
    inst.check_point(x0)?;
    let mut rec = Recorder::new(inst, cfg);
    let mut x = inst.constraint.project(x0)?;
    let mut k = 0;
    loop {
        let (f, g) = inst.value_and_subgradient(&x)?;
        let rel = inst.relative_error(&x);
        let gn = g.norm();
        if k > 0 && rel < cfg.stop_rel_error {
            rec.push(k, &x, f, rel, f64::NAN, None, true);
            return Ok(rec.finish(x, TraceStatus::Converged, k, 0));
        }
        if gn <= ZERO_SUBGRADIENT {
            rec.push(k, &x, f, rel, 0.0, None, true);
            return Ok(rec.finish(x, TraceStatus::Stalled, k, 0));
        }
        if rel < cfg.stop_rel_error {
            rec.push(k, &x, f, rel, f64::NAN, None, true);
            return Ok(rec.finish(x, TraceStatus::Converged, k, 0));
        }
        if k + 1 >= cfg.max_iters {
            rec.push(k, &x, f, rel, f64::NAN, None, true);
            return Ok(rec.finish(x, TraceStatus::MaxIters, k, 0));
        }
        let t = step_len(k, f, gn);
        rec.push(k, &x, f, rel, t * gn, None, false);
        x = inst.constraint.project(&x.axpy(-t, &g))?;
        k += 1;
    }
}

/// Polyak subgradient method: `x - (f(x) - min f) / ||g||^2 * g`, then project.
///
/// With `min f` taken from the problem without dense noise this is also the
/// tolerance-mode variant, whose steps turn negative once `f` drops below `min f`.
pub fn polyak(inst: &ProblemInstance, x0: &Point, cfg: &SolverConfig) -> Result<SolveTrace> {
    let min_f = cfg.min_f.unwrap_or(inst.min_f_hint);
    subgradient_loop(inst, x0, cfg, |_, f, gn| (f - min_f) / (gn * gn))
}

/// Subgradient method with normalized steps of length `lambda * q^k`.
pub fn geometric(inst: &ProblemInstance, x0: &Point, lambda: f64, q: f64, cfg: &SolverConfig) -> Result<SolveTrace> {
    if !(lambda >= 0.0) || !(q > 0.0 && q < 1.0) {
        return Err(invalid("geometric steps need lambda >= 0 and q in (0, 1)"));
    }
    subgradient_loop(inst, x0, cfg, |k, _, gn| lambda * q.powi(k as i32) / gn)
}

/// Prox-linear method with the given step penalty over the instance constraint.
pub fn prox_linear(inst: &ProblemInstance, x0: &Point, penalty: &StepPenalty, cfg: &SolverConfig) -> Result<SolveTrace> {
    cfg.validate()?;
    penalty.validate()?;
    inst.check_point(x0)?;
    let mut rec = Recorder::new(inst, cfg);
    let mut x = inst.constraint.project(x0)?;
    let mut unconverged = 0;
    let mut k = 0;
    let mut last_sub = None;
    loop {
        let f = inst.objective(&x)?;
        let rel = inst.relative_error(&x);
        if rel < cfg.stop_rel_error {
            rec.push(k, &x, f, rel, f64::NAN, last_sub, true);
            return Ok(rec.finish(x, TraceStatus::Converged, k, unconverged));
        }
        if k + 1 >= cfg.max_iters {
            rec.push(k, &x, f, rel, f64::NAN, last_sub, true);
            return Ok(rec.finish(x, TraceStatus::MaxIters, k, unconverged));
        }
        let opts = cfg.subproblem.options(k + 1, f);
        let sub = solve_subproblem(inst, &x, penalty, &inst.constraint, opts)?;
        if sub.gap > opts.tol {
            unconverged += 1;
        }
        let step = sub.point.sub(&x).norm();
        rec.push(k, &x, f, rel, step, last_sub, false);
        last_sub = Some((sub.iters, sub.gap));
        if step == 0.0 && sub.gap <= opts.tol {
            // Fixed point of the prox-linear map.
            rec.push(k + 1, &sub.point, f, rel, 0.0, last_sub, true);
            return Ok(rec.finish(sub.point, TraceStatus::Stalled, k + 1, unconverged));
        }
        x = sub.point;
        k += 1;
    }
}

/// Step rule for [`gradient_descent`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    Constant { eta: f64 },
    /// `tau * (f - min f) / ||grad||^2`.
    Polyak { tau: f64 },
}

/// Projected gradient descent on the squared-l2 formulation.
pub fn gradient_descent(inst: &ProblemInstance, x0: &Point, rule: StepRule, cfg: &SolverConfig) -> Result<SolveTrace> {
    if !inst.penalty.is_smooth() {
        return Err(invalid("gradient descent requires the squared-l2 penalty"));
    }
    match rule {
        StepRule::Constant { eta } if eta >= 0.0 => {}
        StepRule::Polyak { tau } if tau >= 0.0 => {}
        _ => return Err(invalid("step parameters must be nonnegative")),
    }
    let min_f = cfg.min_f.unwrap_or(inst.min_f_hint);
    subgradient_loop(inst, x0, cfg, |_, f, gn| match rule {
        StepRule::Constant { eta } => eta,
        StepRule::Polyak { tau } => tau * (f - min_f).max(0.0) / (gn * gn),
    })
}

/// `X_0 = X_sharp + delta ||X_sharp||_F G / ||G||_F`, blockwise with independent
/// directions; the sparse block of a factor-plus-sparse point starts at zero.
pub fn initialize(truth: &Point, delta: f64, seed: u64) -> Result<Point> {
    if !(delta >= 0.0) {
        return Err(invalid("delta must be nonnegative"));
    }
    let mut g = rng::stream(seed, "init");
    let mut perturb = |m: &nalgebra::DMatrix<f64>| {
        let dir = rng::gaussian_matrix(&mut g, m.nrows(), m.ncols());
        let n = dir.norm();
        m + dir * (delta * m.norm() / n)
    };
    Ok(match truth {
        Point::Sym(x) => Point::Sym(perturb(x)),
        Point::Asym(x, y) => {
            let x0 = perturb(x);
            Point::Asym(x0, perturb(y))
        }
        Point::FactorSparse(x, s) => Point::FactorSparse(perturb(x), s.map(|_| 0.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::{PenaltyKind, Truth};
    use crate::operators::{MeasurementEnsemble, Observation};
    use crate::proxsub::ConstraintSet;
    use nalgebra::{DMatrix, DVector};

    /// `f(X, S) = |X^2 + S|` on a 1x1 full mask; at `X = 0` this is `|S|`.
    fn abs_instance() -> ProblemInstance {
        let ens = MeasurementEnsemble::from_payload(
            1,
            1,
            crate::operators::Payload::Mask { prob: 1.0, entries: vec![(0, 0)] },
        )
        .unwrap();
        let truth = Truth {
            point: Point::FactorSparse(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)),
            m_sharp: DMatrix::zeros(1, 1),
        };
        ProblemInstance::new(ens, Observation::exact(DVector::zeros(1)), PenaltyKind::ScaledL1, truth, ConstraintSet::Unconstrained)
            .unwrap()
    }

    #[test]
    fn polyak_solves_abs_in_one_step() {
        let inst = abs_instance();
        let x0 = Point::FactorSparse(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0));
        let tr = polyak(&inst, &x0, &SolverConfig::new(10)).unwrap();
        assert_eq!(tr.records[0].step, 1.0);
        assert_eq!(tr.final_point.second().unwrap()[(0, 0)], 0.0);
        assert_eq!(tr.iterations, 1);
        assert_eq!(tr.status, TraceStatus::Converged);
    }

    #[test]
    fn truth_stalls_immediately() {
        let inst = abs_instance();
        let tr = polyak(&inst, &inst.truth.point, &SolverConfig::new(10)).unwrap();
        assert_eq!(tr.status, TraceStatus::Stalled);
        assert_eq!(tr.iterations, 0);
        assert_eq!(tr.final_rel_error(), 0.0);
    }

    #[test]
    fn zero_lambda_keeps_iterate() {
        let inst = abs_instance();
        let x0 = Point::FactorSparse(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0));
        let tr = geometric(&inst, &x0, 0.0, 0.5, &SolverConfig::new(5)).unwrap();
        assert_eq!(tr.final_point, x0);
        assert_eq!(tr.status, TraceStatus::MaxIters);
    }

    #[test]
    fn initialization_radius_is_exact() {
        let mut g = rng::stream(5, "t");
        let x = rng::gaussian_matrix(&mut g, 6, 2);
        let truth = Point::Sym(x.clone());
        assert_eq!(initialize(&truth, 0.0, 3).unwrap(), truth);
        let x0 = initialize(&truth, 0.3, 3).unwrap();
        assert!(((x0.factor() - &x).norm() - 0.3 * x.norm()).abs() < 1e-12);
        assert_eq!(initialize(&truth, 0.3, 3).unwrap(), x0);
        assert!(initialize(&truth, -1.0, 3).is_err());
    }
}
