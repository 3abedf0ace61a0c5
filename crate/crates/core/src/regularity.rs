//! Monte Carlo estimates of the regularity constants (RIP, outlier margin,
//! approximation modulus, sharpness, subgradient bound), Procrustes distance,
//! and sharpness probes for the entrywise l1 loss.
//!
//! All estimates are envelopes over random samples, never certificates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::composite::{PenaltyKind, ProblemInstance};
use crate::error::{dim, invalid, Result};
use crate::operators::{EnsembleKind, MeasurementEnsemble};
use crate::point::Point;
use crate::proxsub::project_l1_ball;
use crate::rng::{self, Stream};

/// `min_{R orthogonal} ||X - X_sharp R||_F`, evaluated as the residual at the optimal `R`
/// so that small distances keep full relative precision.
pub fn dist_procrustes(x: &DMatrix<f64>, x_sharp: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != x_sharp.shape() {
        return Err(dim("Procrustes distance needs equal shapes"));
    }
    Ok((x - x_sharp * procrustes_rotation(x, x_sharp)).norm())
}

/// Orthogonal `R` attaining the Procrustes distance.
pub fn procrustes_rotation(x: &DMatrix<f64>, x_sharp: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = (x_sharp.transpose() * x).svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    u * vt
}

/// Summary of estimated constants for one instance or ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegularityReport {
    pub kappa1_hat: f64,
    pub kappa2_hat: f64,
    pub kappa3_hat: f64,
    pub rho_hat: f64,
    pub mu_hat: f64,
    pub l_hat: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub norm_kind: Option<PenaltyKind>,
}

fn sample_seed(seed: u64, tag: &str, i: usize) -> Stream {
    use rand::SeedableRng;
    Stream::seed_from_u64(rng::derive_seed_indexed(seed, tag, &[i as u64]))
}

/// Random unit-Frobenius test matrix of rank at most `k`.
///
/// Quadratic kinds only see the symmetric part of `W`, so for them the sample is
/// `U diag(s) U^T` with signs `s`: every other sample is positive semidefinite,
/// the rest have random signs. Other kinds use `U V^T` with Gaussian factors.
fn test_matrix(g: &mut Stream, kind: EnsembleKind, d1: usize, d2: usize, k: usize, i: usize) -> DMatrix<f64> {
    let w = match kind {
        EnsembleKind::QuadraticI | EnsembleKind::QuadraticII => {
            let u = rng::gaussian_matrix(g, d1, k);
            let signs = DVector::from_fn(k, |_, _| {
                if i % 2 == 0 || rng::uniform(g) < 0.5 { 1.0 } else { -1.0 }
            });
            &u * DMatrix::from_diagonal(&signs) * u.transpose()
        }
        _ => rng::gaussian_matrix(g, d1, k) * rng::gaussian_matrix(g, d2, k).transpose(),
    };
    let n = w.norm();
    w / n
}

fn rip_norm(kind: PenaltyKind) -> Result<PenaltyKind> {
    match kind {
        PenaltyKind::ScaledL1 | PenaltyKind::ScaledL2 => Ok(kind),
        _ => Err(invalid("RIP norm must be scaled-l1 or scaled-l2")),
    }
}

fn check_rank(ens: &MeasurementEnsemble, r: usize) -> Result<()> {
    let (d1, d2) = ens.dims();
    if r == 0 || 2 * r > d1.min(d2) {
        return Err(invalid(format!("rank {r} too large for {d1} x {d2} test matrices of rank 2r")));
    }
    Ok(())
}

/// Per-sample measurement vectors `A(W_i)` for the shared test-matrix sequence.
fn sampled_images(ens: &MeasurementEnsemble, r: usize, n_samples: usize, seed: u64) -> Vec<DVector<f64>> {
    let (d1, d2) = ens.dims();
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut g = sample_seed(seed, "rip-sample", i);
            let w = test_matrix(&mut g, ens.kind(), d1, d2, 2 * r, i);
            ens.apply(&w).expect("shape fixed by construction")
        })
        .collect()
}

/// `(min, max)` of `|||A(W)||| / ||W||_F` over random rank-`2r` matrices.
pub fn estimate_rip(
    ens: &MeasurementEnsemble,
    r: usize,
    norm_kind: PenaltyKind,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let norm = rip_norm(norm_kind)?;
    check_rank(ens, r)?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let ratios: Vec<f64> = sampled_images(ens, r, n_samples, seed).iter().map(|a| norm.value(a)).collect();
    Ok(min_max(&ratios))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `min (1/m)(||A_{I^c}(W)||_1 - ||A_I(W)||_1)` over the same samples as [`estimate_rip`].
pub fn estimate_outlier_margin(
    ens: &MeasurementEnsemble,
    outliers: &[usize],
    r: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_rank(ens, r)?;
    let m = ens.m();
    if 2 * outliers.len() >= m {
        return Err(invalid("outlier set must contain fewer than half of the measurements"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let mut is_out = vec![false; m];
    for &i in outliers {
        if i >= m {
            return Err(dim("outlier index out of range"));
        }
        is_out[i] = true;
    }
    let margins = sampled_images(ens, r, n_samples, seed).into_iter().map(|a| {
        let (mut inl, mut out) = (0.0, 0.0);
        for (i, v) in a.iter().enumerate() {
            if is_out[i] { out += v.abs() } else { inl += v.abs() }
        }
        (inl - out) / m as f64
    });
    Ok(margins.fold(f64::INFINITY, f64::min))
}

/// Random unit direction with the layout of `like`.
fn unit_direction(g: &mut Stream, like: &Point) -> Point {
    let d = like.map(|m| rng::gaussian_matrix(g, m.nrows(), m.ncols()));
    let n = d.norm();
    d.scale(1.0 / n)
}

/// Random point within `radius` of the truth, symmetrizing any sparse block.
fn point_near(g: &mut Stream, inst: &ProblemInstance, radius: f64) -> Point {
    let dir = unit_direction(g, &inst.truth.point);
    let dir = match dir {
        Point::FactorSparse(x, s) => Point::FactorSparse(x, (&s + s.transpose()) * 0.5),
        other => other,
    };
    inst.truth.point.axpy(radius * rng::uniform(g), &dir)
}

fn pair_ratios(inst: &ProblemInstance, n_pairs: usize, radius: f64, seed: u64) -> Vec<(f64, f64, f64)> {
    (0..n_pairs)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "approx-pair", i);
            let x = point_near(&mut g, inst, radius);
            let step = unit_direction(&mut g, &x).scale(radius * rng::uniform(&mut g));
            let y = x.add(&step);
            let n = step.norm();
            if n == 0.0 {
                return None;
            }
            let gap = (inst.objective(&y).ok()? - inst.model_value(&x, &y).ok()?).abs();
            Some((gap, n, n * n))
        })
        .collect()
}

/// `max |f(y) - f_x(y)| / ||y - x||^2` over pairs near the truth.
pub fn estimate_approx_modulus(inst: &ProblemInstance, n_pairs: usize, radius: f64, seed: u64) -> Result<f64> {
    if n_pairs == 0 || !(radius > 0.0) {
        return Err(invalid("need n_pairs >= 1 and radius > 0"));
    }
    Ok(pair_ratios(inst, n_pairs, radius, seed).iter().map(|(g, _, n2)| g / n2).fold(0.0, f64::max))
}

/// Least-squares fit of `|f(y) - f_x(y)| ~ a ||y - x||^2 + b ||y - x||` with `a, b >= 0`.
pub fn estimate_approx_two_term(
    inst: &ProblemInstance,
    n_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_pairs == 0 || !(radius > 0.0) {
        return Err(invalid("need n_pairs >= 1 and radius > 0"));
    }
    let data = pair_ratios(inst, n_pairs, radius, seed);
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (gap, n, n2) in &data {
        s11 += n2 * n2;
        s12 += n2 * n;
        s22 += n * n;
        t1 += n2 * gap;
        t2 += n * gap;
    }
    let det = s11 * s22 - s12 * s12;
    let (a, b) = if det.abs() > 1e-300 {
        ((t1 * s22 - t2 * s12) / det, (s11 * t2 - s12 * t1) / det)
    } else {
        (0.0, 0.0)
    };
    if a >= 0.0 && b >= 0.0 {
        return Ok((a, b));
    }
    // Boundary solutions of the nonnegative fit.
    let a_only = if s11 > 0.0 { (t1 / s11).max(0.0) } else { 0.0 };
    let b_only = if s22 > 0.0 { (t2 / s22).max(0.0) } else { 0.0 };
    let sse = |a: f64, b: f64| data.iter().map(|(g, n, n2)| (g - a * n2 - b * n).powi(2)).sum::<f64>();
    Ok(if sse(a_only, 0.0) <= sse(0.0, b_only) { (a_only, 0.0) } else { (0.0, b_only) })
}

/// Shell radii: 10 log-spaced values in `(0, radius]`, smallest `radius / 1000`.
fn shells(radius: f64) -> [f64; 10] {
    std::array::from_fn(|j| radius * 10f64.powf(-3.0 * (9 - j) as f64 / 9.0))
}

/// `min (f(x) - min f) / dist(x, solution set)` over points on radial shells.
pub fn estimate_sharpness(inst: &ProblemInstance, n_samples: usize, radius: f64, seed: u64) -> Result<f64> {
    if n_samples == 0 || !(radius > 0.0) {
        return Err(invalid("need n_samples >= 1 and radius > 0"));
    }
    let radii = shells(radius);
    let min_f = inst.min_f_hint;
    let ratios: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "sharpness", i);
            let dir = unit_direction(&mut g, &inst.truth.point);
            let x = inst.truth.point.axpy(radii[i % radii.len()], &dir);
            let dist = inst.distance(&x);
            if dist <= 0.0 {
                return None;
            }
            Some((inst.objective(&x).ok()? - min_f) / dist)
        })
        .collect();
    Ok(ratios.into_iter().fold(f64::INFINITY, f64::min))
}

/// `max ||subgradient||` over points within `radius` of the truth.
pub fn estimate_lipschitz(inst: &ProblemInstance, n_samples: usize, radius: f64, seed: u64) -> Result<f64> {
    if n_samples == 0 || !(radius > 0.0) {
        return Err(invalid("need n_samples >= 1 and radius > 0"));
    }
    let norms: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "lipschitz", i);
            let x = point_near(&mut g, inst, radius);
            Some(inst.subgradient(&x).ok()?.norm())
        })
        .collect();
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Outcome of [`rank1_l1_sharpness_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rank1Check {
    pub min_ratio: f64,
    pub bound: f64,
    pub samples: usize,
    pub violated: bool,
}

fn l1(v: &DVector<f64>) -> f64 {
    v.lp_norm(1)
}

fn outer_l1_gap(x: &DVector<f64>, xb: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += (x[i] * x[j] - xb[i] * xb[j]).abs();
        }
    }
    s
}

/// Checks `||x x^T - xb xb^T||_1 >= (sqrt 2 - 1) ||xb||_1 dist_1(x, {+-xb})` on samples
/// with `dist_1(x, {+-xb}) <= (sqrt 2 - 1) ||xb||_1`.
pub fn rank1_l1_sharpness_check(x_bar: &DVector<f64>, n_samples: usize, seed: u64) -> Result<Rank1Check> {
    let nb = l1(x_bar);
    if nb == 0.0 {
        return Err(invalid("x_bar must be nonzero"));
    }
    let c = std::f64::consts::SQRT_2 - 1.0;
    let bound = c * nb;
    let reach = c * nb;
    let d = x_bar.len();
    let radii = shells(reach);
    let ratios: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "rank1", i);
            // Mixture of dense Gaussian, single-coordinate and shrinking directions.
            let mut dir = match i % 4 {
                0 | 1 => rng::gaussian_vector(&mut g, d),
                2 => {
                    let mut v = DVector::zeros(d);
                    let j = (rng::uniform(&mut g) * d as f64) as usize % d;
                    v[j] = if rng::uniform(&mut g) < 0.5 { 1.0 } else { -1.0 };
                    v
                }
                _ => -x_bar + rng::gaussian_vector(&mut g, d) * (0.1 * nb / d as f64),
            };
            let n = l1(&dir);
            if n == 0.0 {
                return None;
            }
            let len = if i % 3 == 0 { radii[i % radii.len()] } else { reach * rng::uniform(&mut g) };
            dir *= len / n;
            let sign = if (i / 4) % 2 == 0 { 1.0 } else { -1.0 };
            let x = x_bar * sign + dir;
            let dist = l1(&(&x - x_bar)).min(l1(&(&x + x_bar)));
            if dist <= 0.0 || dist > reach {
                return None;
            }
            Some(outer_l1_gap(&x, x_bar) / dist)
        })
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Rank1Check { min_ratio, bound, samples: ratios.len(), violated: min_ratio < bound - 1e-9 })
}

/// Diagnostic summary of the general-rank probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConjectureProbe {
    pub min_ratio: f64,
    pub median_ratio: f64,
    pub max_ratio: f64,
    pub samples: usize,
}

fn norm_21(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).sum()
}

/// Samples `X` near the orbit of `X_sharp` and reports `||X X^T - M||_1 / dist_{2,1}`, with the
/// distance taken over sampled rotations plus the Frobenius-optimal one.
pub fn conjecture_probe(
    x_sharp: &DMatrix<f64>,
    n_samples: usize,
    radius: f64,
    n_rotations: usize,
    seed: u64,
) -> Result<ConjectureProbe> {
    if !(radius > 0.0) || n_samples == 0 {
        return Err(invalid("need n_samples >= 1 and radius > 0"));
    }
    let (d, r) = x_sharp.shape();
    let m = x_sharp * x_sharp.transpose();
    let radii = shells(radius);
    let mut ratios: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "conjecture", i);
            let r0 = rng::random_orthogonal(&mut g, r);
            let mut delta = rng::gaussian_matrix(&mut g, d, r);
            let n = norm_21(&delta);
            delta *= radii[i % radii.len()] / n;
            let x = x_sharp * &r0 + delta;
            let mut dist = norm_21(&(&x - x_sharp * procrustes_rotation(&x, x_sharp)));
            for _ in 0..n_rotations {
                let q = rng::random_orthogonal(&mut g, r);
                dist = dist.min(norm_21(&(&x - x_sharp * q)));
            }
            if dist <= 0.0 {
                return None;
            }
            let gap: f64 = (&x * x.transpose() - &m).iter().map(|v| v.abs()).sum();
            Some(gap / dist)
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let samples = ratios.len();
    if samples == 0 {
        return Err(invalid("no usable samples"));
    }
    Ok(ConjectureProbe {
        min_ratio: ratios[0],
        median_ratio: ratios[samples / 2],
        max_ratio: ratios[samples - 1],
        samples,
    })
}

/// Outcome of [`rpca_cross_term_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossTermCheck {
    /// Largest observed `lhs / rhs`.
    pub max_ratio: f64,
    pub violations: usize,
    pub samples: usize,
    /// Row sparsity `k` of `S_sharp`.
    pub k: usize,
    pub nu: f64,
}

fn clip_rows(x: &mut DMatrix<f64>, radius: f64) {
    for mut row in x.row_iter_mut() {
        let n = row.norm();
        if n > radius {
            row.scale_mut(radius / n);
        }
    }
}

fn column_l1(s: &DMatrix<f64>) -> Vec<f64> {
    s.column_iter().map(|c| c.iter().map(|v| v.abs()).sum()).collect()
}

/// Largest `t` in `[0, 1]` with `S_sharp + t (cand - S_sharp)` inside the column budgets.
fn feasible_fraction(s_sharp: &DMatrix<f64>, cand: &DMatrix<f64>, budgets: &[f64]) -> f64 {
    let ok = |t: f64| {
        let s = s_sharp + (cand - s_sharp) * t;
        column_l1(&s).iter().zip(budgets).all(|(a, b)| *a <= b * (1.0 + 1e-12))
    };
    if ok(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) { lo = mid } else { hi = mid }
    }
    lo
}

/// Samples feasible `(X, S)` and checks
/// `|<S - S_sharp, X X^T - M_sharp>| <= 10 sqrt(nu r k / d) ||S - S_sharp||_F ||X - X_sharp||_F`
/// with `X` in the row ball `sqrt(nu r / d)` and symmetric `S` within the column l1 budgets of `S_sharp`.
pub fn rpca_cross_term_check(
    x_sharp: &DMatrix<f64>,
    s_sharp: &DMatrix<f64>,
    nu: Option<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<CrossTermCheck> {
    let (d, r) = x_sharp.shape();
    if s_sharp.shape() != (d, d) {
        return Err(dim("S_sharp must be d x d"));
    }
    let row_max = x_sharp.row_iter().map(|row| row.norm()).fold(0.0, f64::max);
    let nu_min = d as f64 * row_max * row_max / r as f64;
    let nu = nu.unwrap_or(nu_min);
    if nu < nu_min * (1.0 - 1e-12) {
        return Err(invalid("nu is smaller than the incoherence of X_sharp"));
    }
    let radius = (nu * r as f64 / d as f64).sqrt();
    let k = (0..d)
        .map(|j| {
            let col = s_sharp.column(j).iter().filter(|v| **v != 0.0).count();
            let row = s_sharp.row(j).iter().filter(|v| **v != 0.0).count();
            col.max(row)
        })
        .max()
        .unwrap_or(0);
    let budgets = column_l1(s_sharp);
    let m_sharp = x_sharp * x_sharp.transpose();
    let c = 10.0 * (nu * r as f64 * k as f64 / d as f64).sqrt();
    let results: Vec<(f64, bool)> = (0..n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut g = sample_seed(seed, "cross-term", i);
            let scale = radius * 10f64.powf(-2.0 * rng::uniform(&mut g));
            let mut x = x_sharp + rng::gaussian_matrix(&mut g, d, r) * (scale / (r as f64).sqrt());
            clip_rows(&mut x, radius);
            let noise = rng::gaussian_matrix(&mut g, d, d);
            let mut cand = s_sharp + (&noise + noise.transpose()) * (0.5 * rng::uniform(&mut g));
            // Sparse-support candidates reach the boundary of the budget set.
            if i % 2 == 0 {
                let proj: Vec<Vec<f64>> = (0..d)
                    .map(|j| project_l1_ball(&cand.column(j).iter().copied().collect::<Vec<_>>(), budgets[j]))
                    .collect();
                let p = DMatrix::from_fn(d, d, |a, b| proj[b][a]);
                cand = (&p + p.transpose()) * 0.5;
            }
            let t = feasible_fraction(s_sharp, &cand, &budgets);
            let s = s_sharp + (&cand - s_sharp) * t;
            let ds = &s - s_sharp;
            let lhs = ds.dot(&(&x * x.transpose() - &m_sharp)).abs();
            let rhs = c * ds.norm() * (&x - x_sharp).norm();
            if rhs == 0.0 {
                return if lhs == 0.0 { None } else { Some((f64::INFINITY, true)) };
            }
            Some((lhs / rhs, lhs > rhs * (1.0 + 1e-12)))
        })
        .collect();
    Ok(CrossTermCheck {
        max_ratio: results.iter().map(|r| r.0).fold(0.0, f64::max),
        violations: results.iter().filter(|r| r.1).count(),
        samples: results.len(),
        k,
        nu,
    })
}

/// Runs every estimator that applies to `inst` and packs the results.
pub fn audit_instance(
    inst: &ProblemInstance,
    norm_kind: PenaltyKind,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<RegularityReport> {
    let r = inst.rank;
    let (kappa1_hat, kappa2_hat) = estimate_rip(&inst.ensemble, r, norm_kind, n_samples, seed)?;
    let kappa3_hat = estimate_outlier_margin(&inst.ensemble, &inst.observation.outliers, r, n_samples, seed)?;
    Ok(RegularityReport {
        kappa1_hat,
        kappa2_hat,
        kappa3_hat,
        rho_hat: estimate_approx_modulus(inst, n_samples, radius, seed)?,
        mu_hat: estimate_sharpness(inst, n_samples, radius, seed)?,
        l_hat: estimate_lipschitz(inst, n_samples, radius, seed)?,
        n_samples,
        seed,
        norm_kind: Some(norm_kind),
    })
}
