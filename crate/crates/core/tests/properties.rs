use lowrank::problems::{rpca_euclidean_instance, sensing_instance, SensingSpec};
use lowrank::proxsub::subproblem_objective;
use lowrank::regularity::{
    dist_procrustes, estimate_approx_modulus, estimate_outlier_margin, estimate_rip, rank1_l1_sharpness_check,
    rpca_cross_term_check,
};
use lowrank::solvers::SubproblemRule;
use lowrank::*;
use proptest::prelude::*;

const KINDS: [EnsembleKind; 5] = [
    EnsembleKind::GaussianSensing,
    EnsembleKind::QuadraticI,
    EnsembleKind::QuadraticII,
    EnsembleKind::Bilinear,
    EnsembleKind::EntrywiseMask,
];

fn kind() -> impl Strategy<Value = EnsembleKind> {
    (0..KINDS.len()).prop_map(|i| KINDS[i])
}

fn small_sensing(kind: EnsembleKind, d: usize, r: usize, p_fail: f64, penalty: PenaltyKind, seed: u64) -> ProblemInstance {
    let mut spec = SensingSpec::with_multiplier(kind, d, r, 6.0);
    spec.p_fail = p_fail;
    spec.penalty = penalty;
    sensing_instance(&spec, seed).unwrap()
}

fn random_like(p: &Point, seed: u64, scale: f64) -> Point {
    let mut g = rng::stream(seed, "prop");
    p.map(|m| rng::gaussian_matrix(&mut g, m.nrows(), m.ncols()) * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_identity(kind in kind(), d1 in 2usize..9, d2 in 2usize..9, seed in any::<u64>()) {
        let d2 = if kind.requires_square() { d1 } else { d2 };
        let m = if kind == EnsembleKind::EntrywiseMask { 0.6 } else { 25.0 };
        let ens = make_ensemble(kind, d1, d2, m, seed).unwrap();
        let mut g = rng::stream(seed, "adjoint");
        let mat = rng::gaussian_matrix(&mut g, d1, d2);
        let v = rng::gaussian_vector(&mut g, ens.m());
        let lhs = ens.apply(&mat).unwrap().dot(&v);
        let rhs = mat.dot(&ens.adjoint(&v).unwrap());
        let scale = ens.apply(&mat).unwrap().norm() * v.norm() + 1e-300;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn factored_products_match_dense(kind in kind(), d in 2usize..8, k in 1usize..4, seed in any::<u64>()) {
        let ens = make_ensemble(kind, d, d, if kind == EnsembleKind::EntrywiseMask { 0.7 } else { 20.0 }, seed).unwrap();
        let mut g = rng::stream(seed, "factored");
        let l = rng::gaussian_matrix(&mut g, d, k);
        let r = rng::gaussian_matrix(&mut g, d, k);
        let v = rng::gaussian_vector(&mut g, ens.m());
        let dense = ens.apply(&(&l * r.transpose())).unwrap();
        prop_assert!((ens.apply_lowrank(&l, &r).unwrap() - &dense).norm() <= 1e-10 * (1.0 + dense.norm()));
        let a = ens.adjoint(&v).unwrap();
        prop_assert!((ens.adjoint_mul(&v, &r).unwrap() - &a * &r).norm() <= 1e-10 * (1.0 + a.norm() * r.norm()));
        prop_assert!((ens.adjoint_t_mul(&v, &l).unwrap() - a.transpose() * &l).norm() <= 1e-10 * (1.0 + a.norm() * l.norm()));
    }

    #[test]
    fn model_is_convex_and_supported_by_subgradient(
        kind in prop_oneof![Just(EnsembleKind::QuadraticII), Just(EnsembleKind::Bilinear), Just(EnsembleKind::GaussianSensing)],
        penalty in prop_oneof![Just(PenaltyKind::ScaledL1), Just(PenaltyKind::ScaledL2), Just(PenaltyKind::Frobenius)],
        seed in any::<u64>(),
        lambda in 0.0f64..1.0,
    ) {
        let inst = small_sensing(kind, 6, 2, 0.2, penalty, seed);
        let x = inst.truth.point.add(&random_like(&inst.truth.point, seed ^ 1, 0.3));
        let y = x.add(&random_like(&x, seed ^ 2, 0.5));
        let z = x.add(&random_like(&x, seed ^ 3, 0.5));
        let mid = y.scale(lambda).add(&z.scale(1.0 - lambda));
        let fy = inst.model_value(&x, &y).unwrap();
        let fz = inst.model_value(&x, &z).unwrap();
        let fm = inst.model_value(&x, &mid).unwrap();
        prop_assert!(fm <= lambda * fy + (1.0 - lambda) * fz + 1e-10 * (1.0 + fy.abs() + fz.abs()));
        // The chain-rule subgradient at x supports the model at x.
        let zeta = inst.subgradient(&x).unwrap();
        let fx = inst.model_value(&x, &x).unwrap();
        prop_assert!((fx - inst.objective(&x).unwrap()).abs() <= 1e-12 * (1.0 + fx));
        prop_assert!(fy >= fx + zeta.dot(&y.sub(&x)) - 1e-10 * (1.0 + fy.abs()));
    }

    #[test]
    fn projections_are_nonexpansive(seed in any::<u64>(), radius in 0.05f64..2.0) {
        let mut g = rng::stream(seed, "proj");
        let d = 6;
        let budgets: Vec<f64> = (0..d).map(|_| rng::uniform(&mut g) * 2.0).collect();
        let sets = [
            ConstraintSet::RowBall { radius },
            ConstraintSet::Box { lower: -radius, upper: radius },
            ConstraintSet::RpcaEuclidean { radius, budgets, symmetrize: false },
        ];
        let u = Point::FactorSparse(rng::gaussian_matrix(&mut g, d, 2), rng::gaussian_matrix(&mut g, d, d));
        let v = Point::FactorSparse(rng::gaussian_matrix(&mut g, d, 2), rng::gaussian_matrix(&mut g, d, d));
        for set in &sets {
            let pu = set.project(&u).unwrap();
            let pv = set.project(&v).unwrap();
            prop_assert!(pu.sub(&pv).norm() <= u.sub(&v).norm() * (1.0 + 1e-12), "{set:?}");
            prop_assert!(set.project(&pu).unwrap().sub(&pu).norm() <= 1e-12 * (1.0 + pu.norm()));
        }
    }

    #[test]
    fn procrustes_is_rotation_invariant(seed in any::<u64>(), d in 2usize..8, r in 1usize..3) {
        let mut g = rng::stream(seed, "proc");
        let x = rng::gaussian_matrix(&mut g, d, r);
        let xs = rng::gaussian_matrix(&mut g, d, r);
        let q = rng::random_orthogonal(&mut g, r);
        let a = dist_procrustes(&x, &xs).unwrap();
        let b = dist_procrustes(&(&x * &q), &xs).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        prop_assert!(a <= (&x - &xs).norm() + 1e-12);
        prop_assert!((a - dist_procrustes(&xs, &x).unwrap()).abs() <= 1e-10 * (1.0 + a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn subproblem_solution_beats_feasible_points(
        seed in any::<u64>(),
        penalty in prop_oneof![
            (0.5f64..5.0).prop_map(|beta| StepPenalty::Quadratic { beta }),
            (0.5f64..3.0, 0.0f64..0.5).prop_map(|(a, b)| StepPenalty::QuadPlusLinear { a, b }),
            (0.5f64..10.0).prop_map(|gamma| StepPenalty::RowNormSquared { gamma }),
        ],
        constrained in any::<bool>(),
    ) {
        let inst = small_sensing(EnsembleKind::QuadraticII, 5, 1, 0.2, PenaltyKind::ScaledL1, seed);
        let set = if constrained { ConstraintSet::RowBall { radius: 0.6 } } else { ConstraintSet::Unconstrained };
        let base = set.project(&inst.truth.point.add(&random_like(&inst.truth.point, seed, 0.2))).unwrap();
        let opts = SubproblemOptions { tol: 1e-9, max_iter: 5000 };
        let sol = solve_subproblem(&inst, &base, &penalty, &set, opts).unwrap();
        prop_assert!(set.project(&sol.point).unwrap().sub(&sol.point).norm() <= 1e-9);
        let best = subproblem_objective(&inst, &base, &penalty, &sol.point).unwrap();
        let mut g = rng::stream(seed, "vi");
        for i in 0..200 {
            let scale = 10f64.powf(-4.0 * rng::uniform(&mut g));
            let dir = random_like(&sol.point, seed.wrapping_add(i), scale);
            let y = set.project(&sol.point.add(&dir)).unwrap();
            let fy = subproblem_objective(&inst, &base, &penalty, &y).unwrap();
            prop_assert!(fy >= best - 1e-6 * (1.0 + best.abs()), "direction {i}: {fy} < {best}");
        }
        for w in sol.history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn geometric_steps_are_bounded(seed in any::<u64>(), lambda in 0.01f64..1.0, q in 0.5f64..0.99) {
        let inst = small_sensing(EnsembleKind::Bilinear, 6, 2, 0.2, PenaltyKind::ScaledL1, seed);
        let x0 = initialize(&inst.truth.point, 0.5, seed).unwrap();
        let mut cfg = SolverConfig::new(40);
        cfg.stop_rel_error = 1e-300;
        let tr = geometric(&inst, &x0, lambda, q, &cfg).unwrap();
        for rec in &tr.records {
            if rec.step.is_finite() {
                prop_assert!(rec.step <= lambda * q.powi(rec.k as i32) * (1.0 + 1e-12));
            }
        }
        for w in tr.records.windows(2) {
            prop_assert!(w[0].k < w[1].k);
        }
        prop_assert!(tr.records.iter().all(|r| r.rel_error >= 0.0));
    }

    #[test]
    fn solvers_are_deterministic(seed in any::<u64>()) {
        let inst = small_sensing(EnsembleKind::QuadraticI, 6, 1, 0.1, PenaltyKind::ScaledL1, seed);
        let x0 = initialize(&inst.truth.point, 0.3, seed).unwrap();
        let mut cfg = SolverConfig::new(30);
        cfg.subproblem = SubproblemRule::Relative { factor: 1e-8, max_iter: 200 };
        let a = polyak(&inst, &x0, &cfg).unwrap();
        let b = polyak(&inst, &x0, &cfg).unwrap();
        prop_assert_eq!(a.final_point, b.final_point);
        let pen = StepPenalty::Quadratic { beta: 2.0 };
        let a = prox_linear(&inst, &x0, &pen, &SolverConfig::new(3)).unwrap();
        let b = prox_linear(&inst, &x0, &pen, &SolverConfig::new(3)).unwrap();
        prop_assert_eq!(a.final_point, b.final_point);
        let a = sensing_instance(&SensingSpec::with_multiplier(EnsembleKind::Bilinear, 5, 1, 4.0), seed).unwrap();
        let b = sensing_instance(&SensingSpec::with_multiplier(EnsembleKind::Bilinear, 5, 1, 4.0), seed).unwrap();
        prop_assert_eq!(a.observation, b.observation);
    }

    #[test]
    fn rip_envelope_and_outlier_margin(kind in kind(), seed in any::<u64>(), r in 1usize..3) {
        let m = if kind == EnsembleKind::EntrywiseMask { 0.5 } else { 60.0 };
        let ens = make_ensemble(kind, 8, 8, m, seed).unwrap();
        for norm in [PenaltyKind::ScaledL1, PenaltyKind::ScaledL2] {
            let (k1, k2) = estimate_rip(&ens, r, norm, 40, seed).unwrap();
            prop_assert!(0.0 <= k1 && k1 <= k2 && k2.is_finite());
        }
        let (k1, _) = estimate_rip(&ens, r, PenaltyKind::ScaledL1, 40, seed).unwrap();
        let empty = estimate_outlier_margin(&ens, &[], r, 40, seed).unwrap();
        prop_assert!((empty - k1).abs() <= 1e-12 * (1.0 + k1));
        let some: Vec<usize> = (0..ens.m() / 4).collect();
        let margin = estimate_outlier_margin(&ens, &some, r, 40, seed).unwrap();
        prop_assert!(margin <= k1 + 1e-12);
    }

    #[test]
    fn approximation_modulus_below_kappa2(seed in any::<u64>()) {
        let inst = small_sensing(EnsembleKind::GaussianSensing, 8, 2, 0.0, PenaltyKind::ScaledL1, seed);
        let (_, k2) = estimate_rip(&inst.ensemble, 2, PenaltyKind::ScaledL1, 400, seed).unwrap();
        let rho = estimate_approx_modulus(&inst, 200, 0.5, seed).unwrap();
        prop_assert!(rho <= k2 + 1e-9, "rho {rho} kappa2 {k2}");
    }
}

#[test]
fn rank_one_sharpness_holds_on_random_points() {
    for d in [2usize, 5, 20] {
        for t in 0..5u64 {
            let mut g = rng::stream(t, "rank1-prop");
            let xb = rng::gaussian_vector(&mut g, d);
            let chk = rank1_l1_sharpness_check(&xb, 2000, t).unwrap();
            assert!(!chk.violated && chk.samples > 0, "d={d}: {chk:?}");
        }
    }
}

#[test]
fn rpca_cross_term_bound_on_feasible_pairs() {
    for seed in 0..3 {
        let inst = rpca_euclidean_instance(20, 2, 0.1, 1.0, None, seed).unwrap();
        let s = inst.truth.point.second().unwrap();
        let chk = rpca_cross_term_check(inst.truth.point.factor(), s, None, 500, seed).unwrap();
        assert_eq!(chk.violations, 0, "{chk:?}");
        assert!(chk.max_ratio <= 1.0);
    }
}

#[test]
fn scaled_penalties_scale_lipschitz_estimates() {
    let base = small_sensing(EnsembleKind::QuadraticII, 6, 1, 0.0, PenaltyKind::ScaledL1, 4);
    let m = base.m() as f64;
    let scaled = base.clone().with_penalty(PenaltyKind::EntrywiseL1).unwrap();
    let a = lowrank::regularity::estimate_lipschitz(&base, 50, 0.3, 1).unwrap();
    let b = lowrank::regularity::estimate_lipschitz(&scaled, 50, 0.3, 1).unwrap();
    assert!((b - m * a).abs() <= 1e-9 * b, "{a} {b}");
}
