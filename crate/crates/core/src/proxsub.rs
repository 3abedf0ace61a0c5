//! Constraint projections, step penalties, and the prox-linear subproblem solver.
//!
//! The subproblem
//!
//! ```text
//! minimize_t  h(c + J t) + phi(t) + indicator_C(base + t)
//! ```
//!
//! is split as `z = c + J t`, `w = t` (nonsmooth part of `phi`) and `y = base + t`
//! (constraint) and solved by ADMM with one penalty per block and residual balancing.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::composite::{PenaltyKind, ProblemInstance};
use crate::error::{dim, invalid, Result};
use crate::point::Point;

/// Feasible region for the decision variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSet {
    Unconstrained,
    /// `||X||_{2,inf} <= radius`; for asymmetric points also every column of `Y`.
    RowBall { radius: f64 },
    /// Row ball on `X` and `||S e_j||_1 <= budgets[j]` on the sparse block.
    RpcaEuclidean {
        radius: f64,
        budgets: Vec<f64>,
        #[serde(default)]
        symmetrize: bool,
    },
    /// Coordinatewise box, for tests.
    Box { lower: f64, upper: f64 },
}

impl ConstraintSet {
    pub fn is_trivial(&self) -> bool {
        matches!(self, ConstraintSet::Unconstrained)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::Unconstrained => Ok(()),
            ConstraintSet::RowBall { radius } if *radius >= 0.0 => Ok(()),
            ConstraintSet::RpcaEuclidean { radius, budgets, .. }
                if *radius >= 0.0 && budgets.iter().all(|b| *b >= 0.0) =>
            {
                Ok(())
            }
            ConstraintSet::Box { lower, upper } if lower <= upper => Ok(()),
            _ => Err(invalid(format!("invalid constraint set {self:?}"))),
        }
    }

    /// Euclidean projection.
    pub fn project(&self, pt: &Point) -> Result<Point> {
        self.validate()?;
        Ok(match self {
            ConstraintSet::Unconstrained => pt.clone(),
            ConstraintSet::RowBall { radius } => match pt {
                Point::Sym(x) => Point::Sym(clip_rows(x, *radius)),
                Point::Asym(x, y) => {
                    Point::Asym(clip_rows(x, *radius), clip_rows(&y.transpose(), *radius).transpose())
                }
                Point::FactorSparse(x, s) => Point::FactorSparse(clip_rows(x, *radius), s.clone()),
            },
            ConstraintSet::RpcaEuclidean { radius, budgets, symmetrize } => match pt {
                Point::FactorSparse(x, s) => {
                    if budgets.len() != s.ncols() {
                        return Err(dim("one l1 budget per column of S is required"));
                    }
                    let mut s = project_columns(s, budgets);
                    if *symmetrize {
                        for _ in 0..2 {
                            let sym = (&s + s.transpose()) * 0.5;
                            s = project_columns(&sym, budgets);
                        }
                    }
                    Point::FactorSparse(clip_rows(x, *radius), s)
                }
                _ => return Err(dim("the robust PCA set applies to factor-plus-sparse points")),
            },
            ConstraintSet::Box { lower, upper } => pt.map(|m| m.map(|v| v.clamp(*lower, *upper))),
        })
    }
}

fn clip_rows(x: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > radius {
            row.scale_mut(if n > 0.0 { radius / n } else { 0.0 });
        }
    }
    out
}

fn project_columns(s: &DMatrix<f64>, budgets: &[f64]) -> DMatrix<f64> {
    let mut out = s.clone();
    for (j, b) in budgets.iter().enumerate() {
        let col: Vec<f64> = out.column(j).iter().copied().collect();
        let p = project_l1_ball(&col, *b);
        out.column_mut(j).copy_from_slice(&p);
    }
    out
}

/// Euclidean projection onto `{u : ||u||_1 <= radius}` by sorting.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, ak) in a.iter().enumerate() {
        cum += ak;
        let t = (cum - radius) / (k + 1) as f64;
        if *ak > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

/// Proximal term on the step `t = x - x_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "penalty", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepPenalty {
    /// `(beta / 2) ||t||^2`
    Quadratic { beta: f64 },
    /// `a ||t||^2 + b ||t||`
    QuadPlusLinear { a: f64, b: f64 },
    /// `(1 / (2 gamma)) ||t||_{2,1}^2`
    RowNormSquared { gamma: f64 },
}

impl StepPenalty {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepPenalty::Quadratic { beta } => beta > 0.0 && beta.is_finite(),
            StepPenalty::QuadPlusLinear { a, b } => a > 0.0 && a.is_finite() && b >= 0.0 && b.is_finite(),
            StepPenalty::RowNormSquared { gamma } => gamma > 0.0 && gamma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("step penalty {self:?} is not strictly convex")))
        }
    }

    pub fn value(&self, step: &Point) -> f64 {
        match *self {
            StepPenalty::Quadratic { beta } => 0.5 * beta * step.norm_squared(),
            StepPenalty::QuadPlusLinear { a, b } => a * step.norm_squared() + b * step.norm(),
            StepPenalty::RowNormSquared { gamma } => {
                let n = step.norm_21();
                n * n / (2.0 * gamma)
            }
        }
    }

    /// Coefficient of the smooth `(q/2)||t||^2` part.
    fn smooth_coefficient(&self) -> f64 {
        match *self {
            StepPenalty::Quadratic { beta } => beta,
            StepPenalty::QuadPlusLinear { a, .. } => 2.0 * a,
            StepPenalty::RowNormSquared { .. } => 0.0,
        }
    }

    fn has_nonsmooth_part(&self) -> bool {
        match *self {
            StepPenalty::Quadratic { .. } => false,
            StepPenalty::QuadPlusLinear { b, .. } => b > 0.0,
            StepPenalty::RowNormSquared { .. } => true,
        }
    }
}

/// Proximal map of `(1/(2 gamma)) ||. - base||_{2,1}^2` at `v` (unit weight on `||. - v||^2 / 2`).
pub fn prox_row_norm(v: &Point, base: &Point, gamma: f64) -> Result<Point> {
    v.check_layout(base)?;
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    let diff = v.sub(base);
    let factors = row_shrink_factors(&diff.row_norms(), 1.0 / gamma);
    Ok(base.add(&diff.scale_rows(&factors)))
}

/// For row norms `a` returns per-row multipliers implementing the prox of
/// `(kappa/2) (sum_i n_i)^2` on the norms: `n_i = max(a_i - theta, 0)`,
/// `theta = kappa S_k / (1 + kappa k)` over the `k` largest norms.
fn row_shrink_factors(a: &[f64], kappa: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = a.to_vec();
    sorted.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut theta = 0.0;
    let mut cum = 0.0;
    for (k, ak) in sorted.iter().enumerate() {
        cum += ak;
        let t = kappa * cum / (1.0 + kappa * (k + 1) as f64);
        if *ak > t {
            theta = t;
        } else {
            break;
        }
    }
    a.iter()
        .map(|&ai| if ai > theta && ai > 0.0 { (ai - theta) / ai } else { 0.0 })
        .collect()
}

fn soft_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

fn block_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    let n = v.norm();
    if n <= tau {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - tau / n)
    }
}

/// `prox_{h / rho}(v)`.
fn prox_penalty(h: PenaltyKind, v: &DVector<f64>, rho: f64) -> DVector<f64> {
    let m = v.len().max(1) as f64;
    match h {
        PenaltyKind::ScaledL1 => soft_threshold(v, 1.0 / (m * rho)),
        PenaltyKind::EntrywiseL1 => soft_threshold(v, 1.0 / rho),
        PenaltyKind::ScaledL2 => block_threshold(v, 1.0 / (m.sqrt() * rho)),
        PenaltyKind::Frobenius => block_threshold(v, 1.0 / rho),
        PenaltyKind::SquaredL2 => v / (1.0 + 2.0 / (m * rho)),
    }
}

/// Frozen linearization `t -> J t` at a base point.
enum Linear<'a> {
    Dense { jac: DMatrix<f64>, gram: DMatrix<f64> },
    Implicit { inst: &'a ProblemInstance, base: &'a Point },
}

const DENSE_LIMIT: usize = 8_000_000;

impl<'a> Linear<'a> {
    fn new(inst: &'a ProblemInstance, base: &'a Point) -> Linear<'a> {
        let n = base.len();
        let m = inst.m();
        let jac = match base {
            Point::Sym(x) if m * n <= DENSE_LIMIT => Some(inst.ensemble.sym_jacobian(x)),
            Point::Asym(x, y) if m * n <= DENSE_LIMIT => Some(inst.ensemble.asym_jacobian(x, y)),
            _ => None,
        };
        match jac {
            Some(jac) => {
                let gram = jac.tr_mul(&jac);
                Linear::Dense { jac, gram }
            }
            None => Linear::Implicit { inst, base },
        }
    }

    fn apply(&self, t: &DVector<f64>) -> DVector<f64> {
        match self {
            Linear::Dense { jac, .. } => jac * t,
            Linear::Implicit { inst, base } => inst
                .jacobian_apply(base, &base.with_coordinates(t.as_slice()))
                .expect("layout fixed at construction"),
        }
    }

    fn adjoint(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Linear::Dense { jac, .. } => jac.tr_mul(z),
            Linear::Implicit { inst, base } => {
                inst.jacobian_adjoint(base, z).expect("layout fixed at construction").to_vector()
            }
        }
    }

    fn gram_diagonal(&self, n: usize) -> DVector<f64> {
        match self {
            Linear::Dense { gram, .. } => gram.diagonal(),
            Linear::Implicit { .. } => DVector::from_element(n, 1.0),
        }
    }
}

/// Solver for `(shift I + rho_z J^T J) t = rhs`.
enum StepSolver {
    Direct { key: (f64, f64), chol: Cholesky<f64, Dyn> },
    Iterative,
}

impl StepSolver {
    fn solve(
        slot: &mut Option<StepSolver>,
        lin: &Linear<'_>,
        shift: f64,
        rho_z: f64,
        rhs: &DVector<f64>,
        warm: &DVector<f64>,
    ) -> DVector<f64> {
        if let Linear::Dense { gram, .. } = lin {
            let stale = !matches!(slot, Some(StepSolver::Direct { key, .. }) if *key == (shift, rho_z));
            if stale {
                let mut a = gram * rho_z;
                for i in 0..a.nrows() {
                    a[(i, i)] += shift;
                }
                *slot = Cholesky::new(a).map(|chol| StepSolver::Direct { key: (shift, rho_z), chol });
            }
            if let Some(StepSolver::Direct { chol, .. }) = slot {
                return chol.solve(rhs);
            }
        }
        *slot = Some(StepSolver::Iterative);
        conjugate_gradient(lin, shift, rho_z, rhs, warm)
    }
}

/// Jacobi-preconditioned CG on the normal equations.
fn conjugate_gradient(
    lin: &Linear<'_>,
    shift: f64,
    rho_z: f64,
    rhs: &DVector<f64>,
    warm: &DVector<f64>,
) -> DVector<f64> {
    let n = rhs.len();
    let op = |v: &DVector<f64>| -> DVector<f64> {
        let jv = match lin {
            Linear::Dense { gram, .. } => gram * v,
            Linear::Implicit { .. } => lin.adjoint(&lin.apply(v)),
        };
        jv * rho_z + v * shift
    };
    let diag = lin.gram_diagonal(n).map(|g| 1.0 / (shift + rho_z * g));
    let mut x = warm.clone();
    let mut r = rhs - op(&x);
    let target = 1e-13 * rhs.norm().max(1e-300);
    let mut zv = r.component_mul(&diag);
    let mut p = zv.clone();
    let mut rz = r.dot(&zv);
    for _ in 0..(2 * n).max(50) {
        if r.norm() <= target {
            break;
        }
        let ap = op(&p);
        let denom = p.dot(&ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rz / denom;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        zv = r.component_mul(&diag);
        let rz_new = r.dot(&zv);
        p = &zv + &p * (rz_new / rz);
        rz = rz_new;
    }
    x
}

/// Stopping controls for [`solve_subproblem`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubproblemOptions {
    pub tol: f64,
    pub max_iter: usize,
}

/// Output of [`solve_subproblem`].
#[derive(Clone, Debug)]
pub struct SubproblemResult {
    pub point: Point,
    /// `max(primal residual, dual residual)` at exit.
    pub gap: f64,
    pub iters: usize,
    /// Best subproblem objective after each iteration.
    pub history: Vec<f64>,
}

/// Objective `h(c + J t) + phi(t)` of the subproblem at `trial`.
pub fn subproblem_objective(
    inst: &ProblemInstance,
    base: &Point,
    penalty: &StepPenalty,
    trial: &Point,
) -> Result<f64> {
    Ok(inst.model_value(base, trial)? + penalty.value(&trial.sub(base)))
}

/// Approximately minimizes `f_base(v) + penalty(v - base)` over `v` in `set`.
pub fn solve_subproblem(
    inst: &ProblemInstance,
    base: &Point,
    penalty: &StepPenalty,
    set: &ConstraintSet,
    opts: SubproblemOptions,
) -> Result<SubproblemResult> {
    inst.check_point(base)?;
    penalty.validate()?;
    set.validate()?;
    if !(opts.tol > 0.0) {
        return Err(invalid("subproblem tolerance must be positive"));
    }

    let n = base.len();
    let c = inst.residual(base)?;
    let h = inst.penalty;
    let lin = Linear::new(inst, base);
    let q = penalty.smooth_coefficient();
    let use_w = penalty.has_nonsmooth_part();
    let use_y = !set.is_trivial();
    let base_vec = base.to_vector();

    let gbar = (lin.gram_diagonal(n).sum() / n as f64).max(1e-12);
    let scale = if q > 0.0 {
        q
    } else if let StepPenalty::RowNormSquared { gamma } = penalty {
        1.0 / gamma
    } else {
        1.0
    };
    let mut rho_z = scale / gbar;
    let mut rho_w = scale;
    let mut rho_y = scale;

    let mut t = DVector::zeros(n);
    let mut z = c.clone();
    let mut uz = DVector::zeros(c.len());
    let mut w = DVector::zeros(n);
    let mut uw = DVector::zeros(n);
    let mut y = base_vec.clone();
    let mut uy = DVector::zeros(n);

    let phi = |t: &DVector<f64>| penalty.value(&base.with_coordinates(t.as_slice()));
    let mut best_t = t.clone();
    let mut best = h.value(&c);
    let mut history = Vec::new();
    let mut gap = f64::INFINITY;
    let mut solver: Option<StepSolver> = None;
    let mut adaptations = 0usize;
    let mut iters = 0usize;

    while iters < opts.max_iter {
        iters += 1;
        // t-step
        let mut rhs = lin.adjoint(&(&z - &uz - &c)) * rho_z;
        let mut shift = q;
        if use_w {
            rhs += (&w - &uw) * rho_w;
            shift += rho_w;
        }
        if use_y {
            rhs += (&y - &uy - &base_vec) * rho_y;
            shift += rho_y;
        }
        t = StepSolver::solve(&mut solver, &lin, shift, rho_z, &rhs, &t);
        let jt = lin.apply(&t);

        // z-step
        let lin_res = &c + &jt;
        let z_old = z.clone();
        z = prox_penalty(h, &(&lin_res + &uz), rho_z);
        uz += &lin_res - &z;
        let mut r_sq = (&lin_res - &z).norm_squared();
        let dz = lin.adjoint(&(&z - &z_old)) * rho_z;
        let mut dual = dz.clone();
        let (rz_norm, sz_norm) = ((&lin_res - &z).norm(), dz.norm());

        // w-step
        let mut wb = (0.0, 0.0);
        if use_w {
            let w_old = w.clone();
            let v = &t + &uw;
            w = match *penalty {
                StepPenalty::QuadPlusLinear { b, .. } => block_threshold(&v, b / rho_w),
                StepPenalty::RowNormSquared { gamma } => {
                    let vp = base.with_coordinates(v.as_slice());
                    let zero = base.zeros_like();
                    prox_row_norm(&vp, &zero, gamma * rho_w)?.to_vector()
                }
                StepPenalty::Quadratic { .. } => unreachable!(),
            };
            uw += &t - &w;
            r_sq += (&t - &w).norm_squared();
            let dw = (&w - &w_old) * rho_w;
            dual += &dw;
            wb = ((&t - &w).norm(), dw.norm());
        }

        // y-step
        let mut yb = (0.0, 0.0);
        if use_y {
            let y_old = y.clone();
            let v = &base_vec + &t + &uy;
            y = set.project(&base.with_coordinates(v.as_slice()))?.to_vector();
            let pr = &base_vec + &t - &y;
            uy += &pr;
            r_sq += pr.norm_squared();
            let dy = (&y - &y_old) * rho_y;
            dual += &dy;
            yb = (pr.norm(), dy.norm());
        }

        // incumbent
        let (cand, cand_jt) = if use_y {
            let feasible = set.project(&base.with_coordinates((&base_vec + &t).as_slice()))?.to_vector();
            let tc = feasible - &base_vec;
            let jtc = lin.apply(&tc);
            (tc, jtc)
        } else {
            (t.clone(), jt.clone())
        };
        let val = h.value(&(&c + &cand_jt)) + phi(&cand);
        if val < best {
            best = val;
            best_t = cand;
        }
        history.push(best);

        gap = r_sq.sqrt().max(dual.norm());
        if gap <= opts.tol {
            break;
        }

        // residual balancing
        if adaptations < 64 {
            let mut changed = false;
            let mut balance = |rho: &mut f64, u: &mut DVector<f64>, (r, s): (f64, f64)| {
                if r > 10.0 * s {
                    *rho *= 2.0;
                    *u /= 2.0;
                    changed = true;
                } else if s > 10.0 * r {
                    *rho /= 2.0;
                    *u *= 2.0;
                    changed = true;
                }
            };
            balance(&mut rho_z, &mut uz, (rz_norm, sz_norm));
            if use_w {
                balance(&mut rho_w, &mut uw, wb);
            }
            if use_y {
                balance(&mut rho_y, &mut uy, yb);
            }
            if changed {
                adaptations += 1;
            }
        }
    }
    Ok(SubproblemResult {
        point: base.with_coordinates((&base_vec + &best_t).as_slice()),
        gap,
        iters,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::Truth;
    use crate::operators::{make_ensemble, observe, DenseNoise, EnsembleKind, MeasurementEnsemble, Observation, OutlierModel, Payload};
    use crate::rng;

    fn scalar_instance(penalty: PenaltyKind) -> ProblemInstance {
        let ens = MeasurementEnsemble::from_payload(
            1,
            1,
            Payload::gaussian_from(&[DMatrix::from_element(1, 1, 1.0)]),
        )
        .unwrap();
        let truth = Truth { point: Point::Sym(DMatrix::zeros(1, 1)), m_sharp: DMatrix::zeros(1, 1) };
        ProblemInstance::new(ens, Observation::exact(DVector::zeros(1)), penalty, truth, ConstraintSet::Unconstrained)
            .unwrap()
    }

    fn opts() -> SubproblemOptions {
        SubproblemOptions { tol: 1e-12, max_iter: 5000 }
    }

    #[test]
    fn row_ball_rescales() {
        let p = Point::Sym(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let q = ConstraintSet::RowBall { radius: 1.0 }.project(&p).unwrap();
        assert!((q.factor() - DMatrix::from_row_slice(1, 2, &[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(ConstraintSet::RowBall { radius: 1.0 }.project(&q).unwrap(), q);
    }

    #[test]
    fn l1_ball_column() {
        assert_eq!(project_l1_ball(&[3.0, -1.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_l1_ball(&[0.5, -0.5], 2.0), vec![0.5, -0.5]);
    }

    #[test]
    fn scalar_subproblem_by_hand() {
        // min |1 + 2t| + t^2 / 2  =>  t = -1/2
        let inst = scalar_instance(PenaltyKind::ScaledL1);
        let base = Point::Sym(DMatrix::from_element(1, 1, 1.0));
        let res = solve_subproblem(
            &inst,
            &base,
            &StepPenalty::Quadratic { beta: 1.0 },
            &ConstraintSet::Unconstrained,
            opts(),
        )
        .unwrap();
        assert!((res.point.factor()[(0, 0)] - 0.5).abs() < 1e-8, "{:?}", res.point);
    }

    #[test]
    fn huge_beta_keeps_base() {
        let inst = scalar_instance(PenaltyKind::ScaledL1);
        let base = Point::Sym(DMatrix::from_element(1, 1, 1.0));
        let res = solve_subproblem(
            &inst,
            &base,
            &StepPenalty::Quadratic { beta: 1e8 },
            &ConstraintSet::Unconstrained,
            opts(),
        )
        .unwrap();
        assert!(res.point.sub(&base).norm() <= 1e-6);
    }

    #[test]
    fn history_is_monotone() {
        let ens = make_ensemble(EnsembleKind::QuadraticI, 6, 6, 40.0, 2).unwrap();
        let mut g = rng::stream(1, "x");
        let x = rng::gaussian_matrix(&mut g, 6, 2);
        let m = &x * x.transpose();
        let obs = observe(&ens, &m, 0.2, OutlierModel::default(), DenseNoise::None, 4).unwrap();
        let inst = ProblemInstance::new(
            ens,
            obs,
            PenaltyKind::ScaledL1,
            Truth { point: Point::Sym(x.clone()), m_sharp: m },
            ConstraintSet::Unconstrained,
        )
        .unwrap();
        let base = Point::Sym(&x + rng::gaussian_matrix(&mut g, 6, 2) * 0.2);
        let res = solve_subproblem(
            &inst,
            &base,
            &StepPenalty::RowNormSquared { gamma: 1.0 },
            &ConstraintSet::RowBall { radius: 3.0 },
            SubproblemOptions { tol: 1e-9, max_iter: 300 },
        )
        .unwrap();
        assert!(res.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn row_prox_fixed_points() {
        let b = Point::Sym(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(prox_row_norm(&b, &b, 1.0).unwrap(), b);
        let v = b.map(|m| m.add_scalar(1.0));
        let p = prox_row_norm(&v, &b, 1e-8).unwrap();
        assert!(p.sub(&b).norm() < 1e-7);
    }
}
