//! Fast example suite behind `lowrank selftest`.

use nalgebra::{DMatrix, DVector};

use crate::composite::{PenaltyKind, ProblemInstance, Truth};
use crate::harness::table::float;
use crate::operators::{make_ensemble, EnsembleKind, MeasurementEnsemble, Observation, Payload};
use crate::point::Point;
use crate::proxsub::{project_l1_ball, solve_subproblem, ConstraintSet, StepPenalty, SubproblemOptions};
use crate::regularity::{dist_procrustes, estimate_outlier_margin, estimate_rip, rank1_l1_sharpness_check};
use crate::rng;
use crate::solvers::{polyak, SolverConfig, TraceStatus};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> crate::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

/// `f(x) = |x^2|` through a 1x1 quadratic ensemble with `b = 0`.
fn scalar_square(penalty: PenaltyKind) -> crate::Result<ProblemInstance> {
    let ens = MeasurementEnsemble::from_payload(1, 1, Payload::Quadratic(DMatrix::from_element(1, 1, 1.0)))?;
    let truth = Truth { point: Point::Sym(DMatrix::zeros(1, 1)), m_sharp: DMatrix::zeros(1, 1) };
    ProblemInstance::new(ens, Observation::exact(DVector::zeros(1)), penalty, truth, ConstraintSet::Unconstrained)
}

/// `f(X, S) = |X^2 + S|` on a 1x1 full mask.
fn scalar_abs() -> crate::Result<ProblemInstance> {
    let ens = MeasurementEnsemble::from_payload(1, 1, Payload::Mask { prob: 1.0, entries: vec![(0, 0)] })?;
    let truth = Truth { point: Point::FactorSparse(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)), m_sharp: DMatrix::zeros(1, 1) };
    ProblemInstance::new(ens, Observation::exact(DVector::zeros(1)), PenaltyKind::ScaledL1, truth, ConstraintSet::Unconstrained)
}

pub fn run_selftest() -> Vec<Check> {
    let mut out = Vec::new();

    out.push(check("adjoint identity, all kinds", || {
        let mut worst: f64 = 0.0;
        for kind in [
            EnsembleKind::GaussianSensing,
            EnsembleKind::QuadraticI,
            EnsembleKind::QuadraticII,
            EnsembleKind::Bilinear,
            EnsembleKind::EntrywiseMask,
        ] {
            let (d1, d2) = if kind.requires_square() { (6, 6) } else { (6, 4) };
            let m = if kind == EnsembleKind::EntrywiseMask { 0.5 } else { 40.0 };
            let ens = make_ensemble(kind, d1, d2, m, 3)?;
            let mut g = rng::stream(9, kind.name());
            let mat = rng::gaussian_matrix(&mut g, d1, d2);
            let v = rng::gaussian_vector(&mut g, ens.m());
            let lhs = ens.apply(&mat)?.dot(&v);
            let rhs = mat.dot(&ens.adjoint(&v)?);
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
        }
        Ok((worst <= 1e-10, format!("max relative gap {worst:.2e}")))
    }));

    out.push(check("l1 subgradient uses sign(0) = 0", || {
        let g = PenaltyKind::ScaledL1.subgradient(&DVector::from_vec(vec![2.0, 0.0, -1.0, 0.5]));
        Ok((g.as_slice() == [0.25, 0.0, -0.25, 0.25], format!("{:?}", g.as_slice())))
    }));

    out.push(check("procrustes examples", || {
        let mut g = rng::stream(1, "selftest-procrustes");
        let xs = rng::gaussian_matrix(&mut g, 5, 2);
        let rot = rng::random_orthogonal(&mut g, 2);
        let a = dist_procrustes(&(&xs * rot), &xs)?;
        let b = dist_procrustes(&DMatrix::zeros(5, 2), &xs)?;
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let c = dist_procrustes(&e2, &e1)?;
        let ok = a <= 1e-10 && (b - xs.norm()).abs() < 1e-12 && (c - 2f64.sqrt()).abs() < 1e-12;
        Ok((ok, format!("rotated {a:.1e}, zero {b:.4}, e2 vs e1 {c:.6}")))
    }));

    out.push(check("row ball and l1 ball projections", || {
        let p = Point::Sym(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let q = ConstraintSet::RowBall { radius: 1.0 }.project(&p)?;
        let l1 = project_l1_ball(&[3.0, -1.0], 2.0);
        let ok = (q.factor() - DMatrix::from_row_slice(1, 2, &[0.6, 0.8])).norm() < 1e-15 && l1 == [2.0, 0.0];
        Ok((ok, format!("row {:?}, l1 {l1:?}", q.factor().as_slice())))
    }));

    out.push(check("scalar prox-linear subproblem", || {
        // min |1 + 2t| + t^2 / 2 at x = 1 gives t = -1/2.
        let inst = scalar_square(PenaltyKind::ScaledL1)?;
        let base = Point::Sym(DMatrix::from_element(1, 1, 1.0));
        let res = solve_subproblem(
            &inst,
            &base,
            &StepPenalty::Quadratic { beta: 1.0 },
            &ConstraintSet::Unconstrained,
            SubproblemOptions { tol: 1e-12, max_iter: 5000 },
        )?;
        let x = res.point.factor()[(0, 0)];
        Ok(((x - 0.5).abs() < 1e-8, format!("x+ = {x}")))
    }));

    out.push(check("polyak on |x| takes one unit step", || {
        let inst = scalar_abs()?;
        let x0 = Point::FactorSparse(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0));
        let tr = polyak(&inst, &x0, &SolverConfig::new(10))?;
        let ok = tr.records[0].step == 1.0 && tr.iterations == 1 && tr.status == TraceStatus::Converged;
        Ok((ok, format!("step {}, iterations {}, {}", tr.records[0].step, tr.iterations, tr.status.name())))
    }));

    out.push(check("polyak from the truth stalls at k = 0", || {
        let inst = scalar_abs()?;
        let tr = polyak(&inst, &inst.truth.point, &SolverConfig::new(10))?;
        let ok = tr.status == TraceStatus::Stalled && tr.iterations == 0 && tr.final_rel_error() == 0.0;
        Ok((ok, tr.status.name().to_string()))
    }));

    out.push(check("scaled-l1 RIP brackets sqrt(2/pi)", || {
        let ens = make_ensemble(EnsembleKind::GaussianSensing, 30, 30, 1200.0, 5)?;
        let (k1, k2) = estimate_rip(&ens, 2, PenaltyKind::ScaledL1, 200, 6)?;
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let ok = k1 <= k2 && (k1 - target).abs() <= 0.05 && (k2 - target).abs() <= 0.05;
        Ok((ok, format!("[{k1:.4}, {k2:.4}] vs {target:.4}")))
    }));

    out.push(check("outlier margin with no outliers equals kappa1", || {
        let ens = make_ensemble(EnsembleKind::QuadraticI, 8, 8, 160.0, 2)?;
        let (k1, _) = estimate_rip(&ens, 1, PenaltyKind::ScaledL1, 100, 4)?;
        let k3 = estimate_outlier_margin(&ens, &[], 1, 100, 4)?;
        Ok(((k1 - k3).abs() <= 1e-12 * k1.max(1.0), format!("kappa1 {k1:.6}, kappa3 {k3:.6}")))
    }));

    out.push(check("rank-one l1 sharpness, d = 1 and d = 3", || {
        let one = rank1_l1_sharpness_check(&DVector::from_element(1, 1.0), 2000, 1)?;
        let mut g = rng::stream(2, "selftest-rank1");
        let three = rank1_l1_sharpness_check(&rng::gaussian_vector(&mut g, 3), 10_000, 3)?;
        let ok = !one.violated && !three.violated;
        Ok((ok, format!("d=1 {:.4} >= {:.4}; d=3 {:.4} >= {:.4}", one.min_ratio, one.bound, three.min_ratio, three.bound)))
    }));

    out.push(check("csv floats round-trip", || {
        let v = [0.1, 1.0 / 3.0, 6.02e23, -1e-310];
        let ok = v.iter().all(|x| float(*x).parse::<f64>().ok() == Some(*x));
        Ok((ok, float(1.0 / 3.0)))
    }));

    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
