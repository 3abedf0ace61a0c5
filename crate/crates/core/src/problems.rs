//! Random problem instances: sensing, matrix completion and robust PCA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composite::{PenaltyKind, ProblemInstance, RecoveryMetric, Truth};
use crate::error::{invalid, Result};
use crate::operators::{make_ensemble, observe, DenseNoise, EnsembleKind, Observation, OutlierModel};
use crate::point::Point;
use crate::proxsub::ConstraintSet;
use crate::rng;

/// Sensing problem with Gaussian measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub kind: EnsembleKind,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub m: usize,
    pub p_fail: f64,
    pub outlier_model: OutlierModel,
    pub dense_noise: DenseNoise,
    pub penalty: PenaltyKind,
}

impl SensingSpec {
    /// `m = multiplier * r * d1`, the sampling regime used in the experiments.
    pub fn with_multiplier(kind: EnsembleKind, d: usize, r: usize, multiplier: f64) -> SensingSpec {
        SensingSpec {
            kind,
            d1: d,
            d2: d,
            r,
            m: (multiplier * (r * d) as f64).round() as usize,
            p_fail: 0.0,
            outlier_model: OutlierModel::default(),
            dense_noise: DenseNoise::None,
            penalty: PenaltyKind::ScaledL1,
        }
    }
}

/// Orthonormal `d x r` factor: all singular values equal to one.
pub fn orthonormal_factor(g: &mut rng::Stream, d: usize, r: usize) -> DMatrix<f64> {
    let q = rng::random_orthogonal(g, d);
    q.columns(0, r).into_owned()
}

/// Smallest `nu` with `||X||_{2,inf} <= sqrt(nu r / d)`.
pub fn incoherence(x: &DMatrix<f64>) -> f64 {
    let (d, r) = x.shape();
    let row = x.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    d as f64 * row / r as f64
}

/// Quadratic, bilinear or Gaussian sensing. Factors have i.i.d. `N(0, 1/d)` entries.
/// Quadratic kinds and square Gaussian sensing use the symmetric formulation.
pub fn sensing_instance(spec: &SensingSpec, seed: u64) -> Result<ProblemInstance> {
    if spec.r == 0 || spec.r > spec.d1.min(spec.d2) {
        return Err(invalid("rank must lie in [1, min(d1, d2)]"));
    }
    let ens = make_ensemble(spec.kind, spec.d1, spec.d2, spec.m as f64, rng::derive_seed(seed, "ensemble"))?;
    let mut g = rng::stream(seed, "truth");
    let x = rng::gaussian_matrix(&mut g, spec.d1, spec.r) / (spec.d1 as f64).sqrt();
    let point = match spec.kind {
        EnsembleKind::QuadraticI | EnsembleKind::QuadraticII => Point::Sym(x),
        EnsembleKind::GaussianSensing if spec.d1 == spec.d2 => Point::Sym(x),
        EnsembleKind::GaussianSensing | EnsembleKind::Bilinear => {
            let y = rng::gaussian_matrix(&mut g, spec.r, spec.d2) / (spec.d2 as f64).sqrt();
            Point::Asym(x, y)
        }
        EnsembleKind::EntrywiseMask => return Err(invalid("use matcomp_instance for masks")),
    };
    let m_sharp = point.lifted();
    let obs = observe(&ens, &m_sharp, spec.p_fail, spec.outlier_model, spec.dense_noise, seed)?;
    ProblemInstance::new(ens, obs, spec.penalty, Truth { point, m_sharp }, ConstraintSet::Unconstrained)
}

/// Matrix completion over a symmetric Bernoulli mask with an orthonormal truth.
/// The row-ball radius is `sqrt(nu r / d)`, with `nu` defaulting to the truth's incoherence.
pub fn matcomp_instance(
    d: usize,
    r: usize,
    p: f64,
    nu: Option<f64>,
    penalty: PenaltyKind,
    dense_noise: DenseNoise,
    seed: u64,
) -> Result<ProblemInstance> {
    if r == 0 || r > d {
        return Err(invalid("rank must lie in [1, d]"));
    }
    let ens = make_ensemble(EnsembleKind::EntrywiseMask, d, d, p, rng::derive_seed(seed, "ensemble"))?;
    let mut g = rng::stream(seed, "truth");
    let x = orthonormal_factor(&mut g, d, r);
    let nu_x = incoherence(&x);
    let nu = nu.unwrap_or(nu_x);
    if nu < nu_x * (1.0 - 1e-12) {
        return Err(invalid(format!("nu = {nu} is below the truth's incoherence {nu_x}")));
    }
    let radius = (nu * r as f64 / d as f64).sqrt();
    let m_sharp = &x * x.transpose();
    let obs = observe(&ens, &m_sharp, 0.0, OutlierModel::None, dense_noise, seed)?;
    ProblemInstance::new(
        ens,
        obs,
        penalty,
        Truth { point: Point::Sym(x), m_sharp },
        ConstraintSet::RowBall { radius },
    )
}

/// Symmetric sparse corruption `S_ij = delta_ij * N(0, sigma^2)` with Bernoulli(`tau`) support.
pub fn sparse_corruption(g: &mut rng::Stream, d: usize, tau: f64, sigma: f64) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let hit = rng::uniform(g) < tau;
            let v = rng::gaussian(g) * sigma;
            if hit {
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
    }
    s
}

/// Robust PCA instance data: truth factor, corruption and the observed `W`.
struct RpcaData {
    x: DMatrix<f64>,
    s: DMatrix<f64>,
    ens: crate::operators::MeasurementEnsemble,
    obs: Observation,
}

fn rpca_data(d: usize, r: usize, tau: f64, sigma: f64, seed: u64) -> Result<RpcaData> {
    if r == 0 || r > d {
        return Err(invalid("rank must lie in [1, d]"));
    }
    if !(0.0..0.5).contains(&tau) {
        return Err(invalid("tau must lie in [0, 1/2)"));
    }
    let ens = make_ensemble(EnsembleKind::EntrywiseMask, d, d, 1.0, 0)?;
    let mut g = rng::stream(seed, "truth");
    let x = orthonormal_factor(&mut g, d, r);
    let mut gs = rng::stream(seed, "corruption");
    let s = sparse_corruption(&mut gs, d, tau, sigma);
    let m_sharp = &x * x.transpose();
    let clean = ens.apply(&m_sharp)?;
    let b = ens.apply(&(&m_sharp + &s))?;
    let entries = ens.mask_entries().expect("mask ensemble");
    let outliers: Vec<usize> = (0..entries.len()).filter(|&k| s[entries[k]] != 0.0).collect();
    let p_fail = outliers.len() as f64 / entries.len() as f64;
    let m = clean.len();
    let obs = Observation { b, outliers, noise: DVector::zeros(m), p_fail, clean };
    Ok(RpcaData { x, s, ens, obs })
}

/// `min ||X X^T - W||_1` over `||X||_{2,inf} <= c_factor ||X_sharp||_{2,inf}`.
pub fn rpca_l1_instance(d: usize, r: usize, tau: f64, sigma: f64, c_factor: f64, seed: u64) -> Result<ProblemInstance> {
    let data = rpca_data(d, r, tau, sigma, seed)?;
    let radius = c_factor * incoherence(&data.x).sqrt() * (r as f64 / d as f64).sqrt();
    let m_sharp = &data.x * data.x.transpose();
    Ok(ProblemInstance::new(
        data.ens,
        data.obs,
        PenaltyKind::EntrywiseL1,
        Truth { point: Point::Sym(data.x), m_sharp },
        ConstraintSet::RowBall { radius },
    )?
    .with_metric(RecoveryMetric::RelativeL1))
}

/// `min ||X X^T + S - W||_F` over the row ball and the column l1 budgets of `S_sharp`.
pub fn rpca_euclidean_instance(
    d: usize,
    r: usize,
    tau: f64,
    sigma: f64,
    nu: Option<f64>,
    seed: u64,
) -> Result<ProblemInstance> {
    let data = rpca_data(d, r, tau, sigma, seed)?;
    let nu_x = incoherence(&data.x);
    let nu = nu.unwrap_or(nu_x).max(nu_x);
    let radius = (nu * r as f64 / d as f64).sqrt();
    let budgets = data.s.column_iter().map(|c| c.iter().map(|v| v.abs()).sum()).collect();
    let m_sharp = &data.x * data.x.transpose();
    ProblemInstance::new(
        data.ens,
        data.obs,
        PenaltyKind::Frobenius,
        Truth { point: Point::FactorSparse(data.x, data.s), m_sharp },
        ConstraintSet::RpcaEuclidean { radius, budgets, symmetrize: false },
    )
}
