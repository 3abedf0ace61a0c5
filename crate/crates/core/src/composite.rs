//! Composite objectives `f(x) = h(F(x))`, their convex models and chain-rule subgradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::operators::{MeasurementEnsemble, Observation};
use crate::point::{Point, ShapeTag};
use crate::proxsub::ConstraintSet;
use crate::regularity::dist_procrustes;

/// The outer convex function `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// `||z||_1 / m`
    ScaledL1,
    /// `||z||_2 / sqrt(m)`
    ScaledL2,
    /// `||z||_2`
    Frobenius,
    /// `||z||_2^2 / m`, smooth baselines only.
    SquaredL2,
    /// `||z||_1`
    EntrywiseL1,
}

impl PenaltyKind {
    pub fn value(self, z: &DVector<f64>) -> f64 {
        let m = z.len().max(1) as f64;
        match self {
            PenaltyKind::ScaledL1 => z.lp_norm(1) / m,
            PenaltyKind::ScaledL2 => z.norm() / m.sqrt(),
            PenaltyKind::Frobenius => z.norm(),
            PenaltyKind::SquaredL2 => z.norm_squared() / m,
            PenaltyKind::EntrywiseL1 => z.lp_norm(1),
        }
    }

    /// An element of `dh(z)`: `sign(0) = 0` for l1 types, zero at `z = 0` for norms.
    pub fn subgradient(self, z: &DVector<f64>) -> DVector<f64> {
        let m = z.len().max(1) as f64;
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        match self {
            PenaltyKind::ScaledL1 => z.map(|v| sign(v) / m),
            PenaltyKind::EntrywiseL1 => z.map(sign),
            PenaltyKind::ScaledL2 | PenaltyKind::Frobenius => {
                let n = z.norm();
                if n == 0.0 {
                    DVector::zeros(z.len())
                } else {
                    let s = if self == PenaltyKind::ScaledL2 { n * m.sqrt() } else { n };
                    z / s
                }
            }
            PenaltyKind::SquaredL2 => z * (2.0 / m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::ScaledL1 => "scaled-l1",
            PenaltyKind::ScaledL2 => "scaled-l2",
            PenaltyKind::Frobenius => "frobenius",
            PenaltyKind::SquaredL2 => "squared-l2",
            PenaltyKind::EntrywiseL1 => "entrywise-l1",
        }
    }

    pub fn is_smooth(self) -> bool {
        self == PenaltyKind::SquaredL2
    }
}

/// Error reported in traces and used for success decisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMetric {
    /// `||M - M_sharp||_F / ||M_sharp||_F`
    RelativeFrobenius,
    /// `||M - M_sharp||_1 / ||M_sharp||_1` (entrywise)
    RelativeL1,
}

/// Ground truth. `point` has the same shape as the decision variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub point: Point,
    pub m_sharp: DMatrix<f64>,
}

/// Everything needed to evaluate one formulation.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub ensemble: MeasurementEnsemble,
    pub observation: Observation,
    pub penalty: PenaltyKind,
    pub shape: ShapeTag,
    pub rank: usize,
    pub constraint: ConstraintSet,
    pub truth: Truth,
    /// Optimal value of the problem without dense noise.
    pub min_f_hint: f64,
    pub metric: RecoveryMetric,
}

impl ProblemInstance {
    /// Assembles an instance and checks that the truth reproduces the clean measurements.
    pub fn new(
        ensemble: MeasurementEnsemble,
        observation: Observation,
        penalty: PenaltyKind,
        truth: Truth,
        constraint: ConstraintSet,
    ) -> Result<ProblemInstance> {
        let shape = truth.point.shape();
        let rank = truth.point.rank();
        if observation.b.len() != ensemble.m() {
            return Err(dim("observation length differs from the measurement count"));
        }
        if shape == ShapeTag::FactorSparse && ensemble.mask_entries().is_none() {
            return Err(invalid("factor-plus-sparse points require an entrywise-mask ensemble"));
        }
        let clean = ensemble.apply(&truth.m_sharp)?;
        let scale = 1.0 + clean.amax();
        if (&clean - &observation.clean).amax() > 1e-9 * scale {
            return Err(invalid("ground truth does not reproduce the clean measurements"));
        }
        let mut inst = ProblemInstance {
            ensemble,
            observation,
            penalty,
            shape,
            rank,
            constraint,
            truth,
            min_f_hint: 0.0,
            metric: RecoveryMetric::RelativeFrobenius,
        };
        inst.min_f_hint = inst.clean_optimum()?;
        Ok(inst)
    }

    pub fn with_metric(mut self, metric: RecoveryMetric) -> Self {
        self.metric = metric;
        self
    }

    /// Same data under another outer penalty; the optimal value is recomputed.
    pub fn with_penalty(mut self, penalty: PenaltyKind) -> Result<Self> {
        self.penalty = penalty;
        self.min_f_hint = self.clean_optimum()?;
        Ok(self)
    }

    pub fn with_min_f(mut self, min_f: f64) -> Self {
        self.min_f_hint = min_f;
        self
    }

    pub fn m(&self) -> usize {
        self.ensemble.m()
    }

    /// Objective at the truth on measurements with dense noise removed.
    fn clean_optimum(&self) -> Result<f64> {
        let target = self.observation.without_dense_noise();
        let r = self.residual_against(&self.truth.point, &target)?;
        Ok(self.penalty.value(&r))
    }

    pub fn check_point(&self, pt: &Point) -> Result<()> {
        self.truth.point.check_layout(pt)
    }

    fn residual_against(&self, pt: &Point, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(pt)?;
        let a = match pt {
            Point::Sym(x) => self.ensemble.apply_lowrank(x, x)?,
            Point::Asym(x, y) => self.ensemble.apply_lowrank(x, &y.transpose())?,
            Point::FactorSparse(x, s) => self.ensemble.apply(&(x * x.transpose() + s))?,
        };
        Ok(a - b)
    }

    /// `F(x)`.
    pub fn residual(&self, pt: &Point) -> Result<DVector<f64>> {
        self.residual_against(pt, &self.observation.b)
    }

    /// `f(x) = h(F(x))`.
    pub fn objective(&self, pt: &Point) -> Result<f64> {
        Ok(self.penalty.value(&self.residual(pt)?))
    }

    /// `F(base) + dF(base)(trial - base)`.
    pub fn linearized_residual(&self, base: &Point, trial: &Point) -> Result<DVector<f64>> {
        self.check_point(base)?;
        self.check_point(trial)?;
        let c = self.residual(base)?;
        let step = trial.sub(base);
        Ok(c + self.jacobian_apply(base, &step)?)
    }

    /// `dF(base)[step]`.
    pub fn jacobian_apply(&self, base: &Point, step: &Point) -> Result<DVector<f64>> {
        let e = &self.ensemble;
        Ok(match (base, step) {
            (Point::Sym(x), Point::Sym(t)) => e.apply_lowrank(x, t)? + e.apply_lowrank(t, x)?,
            (Point::Asym(x, y), Point::Asym(tx, ty)) => {
                e.apply_lowrank(tx, &y.transpose())? + e.apply_lowrank(x, &ty.transpose())?
            }
            (Point::FactorSparse(x, _), Point::FactorSparse(t, ts)) => {
                e.apply(&(x * t.transpose() + t * x.transpose() + ts))?
            }
            _ => return Err(dim("point shapes differ")),
        })
    }

    /// `dF(base)^* [v]`, the chain-rule map from residual space to point space.
    pub fn jacobian_adjoint(&self, base: &Point, v: &DVector<f64>) -> Result<Point> {
        let e = &self.ensemble;
        Ok(match base {
            Point::Sym(x) if e.kind().is_symmetric() => Point::Sym(e.adjoint_mul(v, x)? * 2.0),
            Point::Sym(x) => Point::Sym(e.adjoint_mul(v, x)? + e.adjoint_t_mul(v, x)?),
            Point::Asym(x, y) => {
                let gx = e.adjoint_mul(v, &y.transpose())?;
                let gy = e.adjoint_t_mul(v, x)?.transpose();
                Point::Asym(gx, gy)
            }
            Point::FactorSparse(x, _) => {
                let sbar = e.adjoint(v)?;
                let gx = (&sbar + sbar.transpose()) * x;
                Point::FactorSparse(gx, sbar)
            }
        })
    }

    /// Convex model `f_base(trial)`.
    pub fn model_value(&self, base: &Point, trial: &Point) -> Result<f64> {
        Ok(self.penalty.value(&self.linearized_residual(base, trial)?))
    }

    /// Chain-rule subgradient `dF(x)^* s` with `s` in `dh(F(x))`.
    pub fn subgradient(&self, pt: &Point) -> Result<Point> {
        Ok(self.value_and_subgradient(pt)?.1)
    }

    /// `(f(x), dF(x)^* s)` from a single residual evaluation.
    pub fn value_and_subgradient(&self, pt: &Point) -> Result<(f64, Point)> {
        let r = self.residual(pt)?;
        let g = self.jacobian_adjoint(pt, &self.penalty.subgradient(&r))?;
        Ok((self.penalty.value(&r), g))
    }

    /// Gradient of the squared-l2 objective.
    pub fn smooth_gradient(&self, pt: &Point) -> Result<Point> {
        if !self.penalty.is_smooth() {
            return Err(invalid("smooth gradient requires the squared-l2 penalty"));
        }
        self.subgradient(pt)
    }

    /// Recovery error of `pt` under the instance metric.
    /// With a zero low-rank truth the sparse block joins the (absolute) error.
    pub fn relative_error(&self, pt: &Point) -> f64 {
        let mut diff = pt.lifted() - &self.truth.m_sharp;
        if let (Point::FactorSparse(_, s), Some(ss)) = (pt, self.truth.point.second()) {
            if self.truth.m_sharp.iter().all(|v| *v == 0.0) {
                diff += s - ss;
            }
        }
        match self.metric {
            RecoveryMetric::RelativeFrobenius => {
                let n = self.truth.m_sharp.norm();
                if n == 0.0 { diff.norm() } else { diff.norm() / n }
            }
            RecoveryMetric::RelativeL1 => {
                let n: f64 = self.truth.m_sharp.iter().map(|v| v.abs()).sum();
                let e: f64 = diff.iter().map(|v| v.abs()).sum();
                if n == 0.0 { e } else { e / n }
            }
        }
    }

    /// Distance to the solution set: Procrustes for factor-only symmetric points,
    /// blockwise Euclidean otherwise.
    pub fn distance(&self, pt: &Point) -> f64 {
        match (pt, &self.truth.point) {
            (Point::Sym(x), Point::Sym(xs)) => dist_procrustes(x, xs).unwrap_or(f64::NAN),
            (Point::FactorSparse(x, s), Point::FactorSparse(xs, ss)) => {
                let dx = dist_procrustes(x, xs).unwrap_or(f64::NAN);
                (dx * dx + (s - ss).norm_squared()).sqrt()
            }
            _ => pt.sub(&self.truth.point).norm(),
        }
    }
}
