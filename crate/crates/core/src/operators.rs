//! Measurement ensembles: the linear map `A`, its adjoint, and the corrupted
//! observation model.
//!
//! Sampling data is stored explicitly (one row per measurement) so that both
//! `A` and `A*` are exact and cheap for factored arguments `M = L R^T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::rng::{self, Stream};

/// Which family of linear measurements an ensemble realizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleKind {
    #[serde(rename = "gaussian-sensing")]
    GaussianSensing,
    #[serde(rename = "quadratic-I")]
    QuadraticI,
    #[serde(rename = "quadratic-II")]
    QuadraticII,
    #[serde(rename = "bilinear")]
    Bilinear,
    #[serde(rename = "entrywise-mask")]
    EntrywiseMask,
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::GaussianSensing => "gaussian-sensing",
            EnsembleKind::QuadraticI => "quadratic-I",
            EnsembleKind::QuadraticII => "quadratic-II",
            EnsembleKind::Bilinear => "bilinear",
            EnsembleKind::EntrywiseMask => "entrywise-mask",
        }
    }

    /// Kinds that only make sense for square matrices.
    /// Kinds whose adjoint images are symmetric matrices.
    pub fn is_symmetric(self) -> bool {
        matches!(self, EnsembleKind::QuadraticI | EnsembleKind::QuadraticII)
    }

    pub fn requires_square(self) -> bool {
        matches!(
            self,
            EnsembleKind::QuadraticI | EnsembleKind::QuadraticII | EnsembleKind::EntrywiseMask
        )
    }
}

impl std::fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Stored sampling data. Rows index measurements.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Row `i` is `vec(P_i)` in column-major order; shape `m x (d1*d2)`.
    Gaussian(DMatrix<f64>),
    /// Row `i` is `p_i`; shape `m x d`.
    Quadratic(DMatrix<f64>),
    /// Rows are `(p_i, p~_i)`.
    SymmetrizedQuadratic(DMatrix<f64>, DMatrix<f64>),
    /// Rows are `(p_i, q_i)`.
    Bilinear(DMatrix<f64>, DMatrix<f64>),
    /// Observed index set in row-major order, symmetric, with its sampling probability.
    Mask { prob: f64, entries: Vec<(usize, usize)> },
}

impl Payload {
    /// Packs a list of sensing matrices `P_i` into the row layout used internally.
    pub fn gaussian_from(mats: &[DMatrix<f64>]) -> Payload {
        let (d1, d2) = mats.first().map(|p| p.shape()).unwrap_or((0, 0));
        let mut g = DMatrix::zeros(mats.len(), d1 * d2);
        for (i, p) in mats.iter().enumerate() {
            for (k, v) in p.as_slice().iter().enumerate() {
                g[(i, k)] = *v;
            }
        }
        Payload::Gaussian(g)
    }

    fn kind(&self) -> EnsembleKind {
        match self {
            Payload::Gaussian(_) => EnsembleKind::GaussianSensing,
            Payload::Quadratic(_) => EnsembleKind::QuadraticI,
            Payload::SymmetrizedQuadratic(..) => EnsembleKind::QuadraticII,
            Payload::Bilinear(..) => EnsembleKind::Bilinear,
            Payload::Mask { .. } => EnsembleKind::EntrywiseMask,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Gaussian(g) => g.nrows(),
            Payload::Quadratic(p) => p.nrows(),
            Payload::SymmetrizedQuadratic(p, _) => p.nrows(),
            Payload::Bilinear(p, _) => p.nrows(),
            Payload::Mask { entries, .. } => entries.len(),
        }
    }
}

/// A realized linear map `A: R^{d1 x d2} -> R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementEnsemble {
    kind: EnsembleKind,
    d1: usize,
    d2: usize,
    m: usize,
    seed: u64,
    payload: Payload,
}

/// Builds an ensemble with i.i.d. standard Gaussian sampling data.
///
/// `m_or_p` is the measurement count for sensing kinds and the observation
/// probability for [`EnsembleKind::EntrywiseMask`].
pub fn make_ensemble(
    kind: EnsembleKind,
    d1: usize,
    d2: usize,
    m_or_p: f64,
    seed: u64,
) -> Result<MeasurementEnsemble> {
    if d1 == 0 || d2 == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    if kind.requires_square() && d1 != d2 {
        return Err(dim(format!("{kind} requires d1 = d2, got {d1} x {d2}")));
    }
    let mut rng = rng::stream(seed, kind.name());
    let payload = match kind {
        EnsembleKind::EntrywiseMask => {
            let p = m_or_p;
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid(format!("mask probability must lie in (0, 1], got {p}")));
            }
            Payload::Mask { prob: p, entries: sample_mask(&mut rng, d1, p) }
        }
        _ => {
            if !(m_or_p >= 1.0) || m_or_p.fract() != 0.0 {
                return Err(invalid(format!("measurement count must be a positive integer, got {m_or_p}")));
            }
            let m = m_or_p as usize;
            match kind {
                EnsembleKind::GaussianSensing => {
                    Payload::Gaussian(rng::gaussian_matrix(&mut rng, m, d1 * d2))
                }
                EnsembleKind::QuadraticI => Payload::Quadratic(rng::gaussian_matrix(&mut rng, m, d1)),
                EnsembleKind::QuadraticII => {
                    let p = rng::gaussian_matrix(&mut rng, m, d1);
                    let pt = rng::gaussian_matrix(&mut rng, m, d1);
                    Payload::SymmetrizedQuadratic(p, pt)
                }
                EnsembleKind::Bilinear => {
                    let p = rng::gaussian_matrix(&mut rng, m, d1);
                    let q = rng::gaussian_matrix(&mut rng, m, d2);
                    Payload::Bilinear(p, q)
                }
                EnsembleKind::EntrywiseMask => unreachable!(),
            }
        }
    };
    let m = payload.len();
    Ok(MeasurementEnsemble { kind, d1, d2, m, seed, payload })
}

/// Bernoulli sampling of the upper triangle, mirrored so that the set is symmetric.
fn sample_mask(rng: &mut Stream, d: usize, p: f64) -> Vec<(usize, usize)> {
    let mut keep = vec![false; d * d];
    for i in 0..d {
        for j in i..d {
            if p >= 1.0 || rng::uniform(rng) < p {
                keep[i * d + j] = true;
                keep[j * d + i] = true;
            }
        }
    }
    (0..d * d).filter(|&k| keep[k]).map(|k| (k / d, k % d)).collect()
}

fn rowwise_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    for k in 0..a.ncols() {
        out += a.column(k).component_mul(&b.column(k));
    }
    out
}

fn quad_lowrank(p: &DMatrix<f64>, left: &DMatrix<f64>, right: &DMatrix<f64>) -> DVector<f64> {
    let pl = p * left;
    if std::ptr::eq(left, right) {
        pl.column_iter().map(|c| c.component_mul(&c)).fold(DVector::zeros(p.nrows()), |acc, c| acc + c)
    } else {
        rowwise_dot(&pl, &(p * right))
    }
}

fn scale_rows(v: &DVector<f64>, mut b: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in b.column_iter_mut() {
        col.component_mul_assign(v);
    }
    b
}

impl MeasurementEnsemble {
    /// Builds an ensemble from hand-supplied sampling data.
    #[cfg(feature = "explicit-payload")]
    pub fn from_payload(d1: usize, d2: usize, payload: Payload) -> Result<MeasurementEnsemble> {
        let kind = payload.kind();
        if d1 == 0 || d2 == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        if kind.requires_square() && d1 != d2 {
            return Err(dim(format!("{kind} requires d1 = d2")));
        }
        let ok = match &payload {
            Payload::Gaussian(g) => g.ncols() == d1 * d2,
            Payload::Quadratic(p) => p.ncols() == d1,
            Payload::SymmetrizedQuadratic(p, q) => {
                p.ncols() == d1 && q.ncols() == d1 && p.nrows() == q.nrows()
            }
            Payload::Bilinear(p, q) => p.ncols() == d1 && q.ncols() == d2 && p.nrows() == q.nrows(),
            Payload::Mask { prob, entries } => {
                let mut sorted = entries.clone();
                sorted.sort_unstable();
                sorted.dedup();
                let symmetric = entries.iter().all(|&(i, j)| sorted.binary_search(&(j, i)).is_ok());
                *prob > 0.0
                    && *prob <= 1.0
                    && sorted == *entries
                    && symmetric
                    && entries.iter().all(|&(i, j)| i < d1 && j < d2)
            }
        };
        if !ok {
            return Err(dim("payload does not match the stated dimensions"));
        }
        let m = payload.len();
        if m == 0 {
            return Err(invalid("payload must contain at least one measurement"));
        }
        Ok(MeasurementEnsemble { kind, d1, d2, m, seed: 0, payload })
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Observation probability for masks, `None` otherwise.
    pub fn mask_probability(&self) -> Option<f64> {
        match &self.payload {
            Payload::Mask { prob, .. } => Some(*prob),
            _ => None,
        }
    }

    /// Observed index pairs for masks (row-major order).
    pub fn mask_entries(&self) -> Option<&[(usize, usize)]> {
        match &self.payload {
            Payload::Mask { entries, .. } => Some(entries),
            _ => None,
        }
    }

    fn check_matrix(&self, mat: &DMatrix<f64>) -> Result<()> {
        if mat.shape() != (self.d1, self.d2) {
            return Err(dim(format!(
                "expected a {} x {} matrix, got {} x {}",
                self.d1,
                self.d2,
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(())
    }

    fn check_vector(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.m {
            return Err(dim(format!("expected a vector of length {}, got {}", self.m, v.len())));
        }
        Ok(())
    }

    /// `A(M)`.
    pub fn apply(&self, mat: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_matrix(mat)?;
        Ok(match &self.payload {
            Payload::Gaussian(g) => g * DVector::from_column_slice(mat.as_slice()),
            Payload::Quadratic(p) => rowwise_dot(&(p * mat), p),
            Payload::SymmetrizedQuadratic(p, pt) => {
                rowwise_dot(&(p * mat), p) - rowwise_dot(&(pt * mat), pt)
            }
            Payload::Bilinear(p, q) => rowwise_dot(&(p * mat), q),
            Payload::Mask { entries, .. } => {
                DVector::from_iterator(entries.len(), entries.iter().map(|&(i, j)| mat[(i, j)]))
            }
        })
    }

    /// `A(L R^T)` without forming the product when the payload allows it.
    /// `left` is `d1 x k`, `right` is `d2 x k`.
    pub fn apply_lowrank(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<DVector<f64>> {
        if left.nrows() != self.d1 || right.nrows() != self.d2 || left.ncols() != right.ncols() {
            return Err(dim("factor shapes do not match the ensemble"));
        }
        Ok(match &self.payload {
            Payload::Gaussian(g) => {
                let mat = left * right.transpose();
                g * DVector::from_column_slice(mat.as_slice())
            }
            Payload::Quadratic(p) => quad_lowrank(p, left, right),
            Payload::SymmetrizedQuadratic(p, pt) => quad_lowrank(p, left, right) - quad_lowrank(pt, left, right),
            Payload::Bilinear(p, q) => rowwise_dot(&(p * left), &(q * right)),
            Payload::Mask { entries, .. } => DVector::from_iterator(
                entries.len(),
                entries.iter().map(|&(i, j)| left.row(i).dot(&right.row(j))),
            ),
        })
    }

    /// `A*(v)` as a dense `d1 x d2` matrix.
    pub fn adjoint(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_vector(v)?;
        Ok(match &self.payload {
            Payload::Gaussian(g) => {
                DMatrix::from_column_slice(self.d1, self.d2, (g.transpose() * v).as_slice())
            }
            Payload::Quadratic(p) => p.transpose() * scale_rows(v, p.clone()),
            Payload::SymmetrizedQuadratic(p, pt) => {
                p.transpose() * scale_rows(v, p.clone()) - pt.transpose() * scale_rows(v, pt.clone())
            }
            Payload::Bilinear(p, q) => p.transpose() * scale_rows(v, q.clone()),
            Payload::Mask { entries, .. } => {
                let mut out = DMatrix::zeros(self.d1, self.d2);
                for (k, &(i, j)) in entries.iter().enumerate() {
                    out[(i, j)] += v[k];
                }
                out
            }
        })
    }

    /// `A*(v) B` for `B` of shape `d2 x k`.
    pub fn adjoint_mul(&self, v: &DVector<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_vector(v)?;
        if b.nrows() != self.d2 {
            return Err(dim("right factor must have d2 rows"));
        }
        Ok(match &self.payload {
            Payload::Gaussian(_) => self.adjoint(v)? * b,
            Payload::Quadratic(p) => p.transpose() * scale_rows(v, p * b),
            Payload::SymmetrizedQuadratic(p, pt) => {
                p.transpose() * scale_rows(v, p * b) - pt.transpose() * scale_rows(v, pt * b)
            }
            Payload::Bilinear(p, q) => p.transpose() * scale_rows(v, q * b),
            Payload::Mask { entries, .. } => {
                let mut out = DMatrix::zeros(self.d1, b.ncols());
                for (k, &(i, j)) in entries.iter().enumerate() {
                    let w = v[k];
                    if w != 0.0 {
                        for c in 0..b.ncols() {
                            out[(i, c)] += w * b[(j, c)];
                        }
                    }
                }
                out
            }
        })
    }

    /// `A*(v)^T B` for `B` of shape `d1 x k`.
    pub fn adjoint_t_mul(&self, v: &DVector<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_vector(v)?;
        if b.nrows() != self.d1 {
            return Err(dim("right factor must have d1 rows"));
        }
        Ok(match &self.payload {
            Payload::Gaussian(_) => self.adjoint(v)?.transpose() * b,
            Payload::Quadratic(_) | Payload::SymmetrizedQuadratic(..) => self.adjoint_mul(v, b)?,
            Payload::Bilinear(p, q) => q.transpose() * scale_rows(v, p * b),
            Payload::Mask { entries, .. } => {
                let mut out = DMatrix::zeros(self.d2, b.ncols());
                for (k, &(i, j)) in entries.iter().enumerate() {
                    let w = v[k];
                    if w != 0.0 {
                        for c in 0..b.ncols() {
                            out[(j, c)] += w * b[(i, c)];
                        }
                    }
                }
                out
            }
        })
    }

    /// Jacobian of `X -> A(X X^T)` at `X`; row `i` is `vec((G_i + G_i^T) X)`.
    pub(crate) fn sym_jacobian(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, r) = x.shape();
        let n = d * r;
        let mut jac = DMatrix::zeros(self.m, n);
        match &self.payload {
            Payload::Gaussian(g) => {
                for i in 0..self.m {
                    let pi = DMatrix::from_iterator(self.d1, self.d2, g.row(i).iter().copied());
                    let gx = (&pi + pi.transpose()) * x;
                    for (k, v) in gx.as_slice().iter().enumerate() {
                        jac[(i, k)] = *v;
                    }
                }
            }
            Payload::Quadratic(p) => {
                let px = p * x;
                for c in 0..r {
                    for a in 0..d {
                        let mut col = jac.column_mut(a + c * d);
                        col.copy_from(&(p.column(a).component_mul(&px.column(c)) * 2.0));
                    }
                }
            }
            Payload::SymmetrizedQuadratic(p, pt) => {
                let px = p * x;
                let ptx = pt * x;
                for c in 0..r {
                    for a in 0..d {
                        let v = (p.column(a).component_mul(&px.column(c))
                            - pt.column(a).component_mul(&ptx.column(c)))
                            * 2.0;
                        jac.column_mut(a + c * d).copy_from(&v);
                    }
                }
            }
            Payload::Bilinear(p, q) => {
                // (p q^T + q p^T) X = p (X^T q)^T + q (X^T p)^T
                let px = p * x;
                let qx = q * x;
                for c in 0..r {
                    for a in 0..d {
                        let v = p.column(a).component_mul(&qx.column(c))
                            + q.column(a).component_mul(&px.column(c));
                        jac.column_mut(a + c * d).copy_from(&v);
                    }
                }
            }
            Payload::Mask { entries, .. } => {
                for (k, &(a, b)) in entries.iter().enumerate() {
                    for c in 0..r {
                        jac[(k, a + c * d)] += x[(b, c)];
                        jac[(k, b + c * d)] += x[(a, c)];
                    }
                }
            }
        }
        jac
    }

    /// Jacobian of `(X, Y) -> A(X Y)` at `(X, Y)`; columns are `vec(dX)` then `vec(dY)`.
    pub(crate) fn asym_jacobian(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let (d1, r) = x.shape();
        let d2 = y.ncols();
        let nx = d1 * r;
        let mut jac = DMatrix::zeros(self.m, nx + r * d2);
        // dX part: G_i Y^T (d1 x r); dY part: X^T G_i (r x d2).
        let yt = y.transpose();
        match &self.payload {
            Payload::Gaussian(g) => {
                for i in 0..self.m {
                    let pi = DMatrix::from_iterator(self.d1, self.d2, g.row(i).iter().copied());
                    let gx = &pi * &yt;
                    let gy = x.transpose() * &pi;
                    for (k, v) in gx.as_slice().iter().enumerate() {
                        jac[(i, k)] = *v;
                    }
                    for (k, v) in gy.as_slice().iter().enumerate() {
                        jac[(i, nx + k)] = *v;
                    }
                }
            }
            Payload::Quadratic(_) | Payload::SymmetrizedQuadratic(..) | Payload::Bilinear(..) => {
                let terms: Vec<(f64, &DMatrix<f64>, &DMatrix<f64>)> = match &self.payload {
                    Payload::Quadratic(p) => vec![(1.0, p, p)],
                    Payload::SymmetrizedQuadratic(p, pt) => vec![(1.0, p, p), (-1.0, pt, pt)],
                    Payload::Bilinear(p, q) => vec![(1.0, p, q)],
                    _ => unreachable!(),
                };
                for (sign, p, q) in terms {
                    // G = p q^T: G Y^T = p (Y q)^T ; X^T G = (X^T p) q^T
                    let qy = q * &yt; // m x r, row i = (Y q_i)^T
                    let px = p * x; // m x r, row i = (X^T p_i)^T
                    for c in 0..r {
                        for a in 0..d1 {
                            let v = p.column(a).component_mul(&qy.column(c)) * sign;
                            let mut col = jac.column_mut(a + c * d1);
                            col += v;
                        }
                    }
                    for b in 0..d2 {
                        for c in 0..r {
                            let v = px.column(c).component_mul(&q.column(b)) * sign;
                            let mut col = jac.column_mut(nx + c + b * r);
                            col += v;
                        }
                    }
                }
            }
            Payload::Mask { entries, .. } => {
                for (k, &(a, b)) in entries.iter().enumerate() {
                    for c in 0..r {
                        jac[(k, a + c * d1)] += y[(c, b)];
                        jac[(k, nx + c + b * r)] += x[(a, c)];
                    }
                }
            }
        }
        jac
    }
}

/// How measurements indexed by the outlier set are corrupted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutlierModel {
    /// `b_i = A(M)_i + sigma * g_i`.
    AdditiveGaussian { sigma: f64 },
    /// `b_i = sigma * g_i`.
    ReplaceGaussian { sigma: f64 },
    /// No corruption; the outlier set is empty.
    None,
}

impl Default for OutlierModel {
    fn default() -> Self {
        OutlierModel::AdditiveGaussian { sigma: 1.0 }
    }
}

/// Dense additive noise added to every measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DenseNoise {
    None,
    /// Gaussian direction rescaled to `||e||_2 = delta * sigma_r(X)` where
    /// `sigma_r(X) = sqrt(sigma_r(M))` is the smallest nonzero factor singular value.
    Scaled { delta: f64 },
}

/// Measurements together with the corruption that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub b: DVector<f64>,
    /// Sorted outlier indices.
    pub outliers: Vec<usize>,
    pub noise: DVector<f64>,
    pub p_fail: f64,
    /// `A(M_sharp)`.
    pub clean: DVector<f64>,
}

impl Observation {
    /// Noiseless observation `b = A(M)`.
    pub fn exact(clean: DVector<f64>) -> Observation {
        let m = clean.len();
        Observation { b: clean.clone(), outliers: Vec::new(), noise: DVector::zeros(m), p_fail: 0.0, clean }
    }

    /// Measurements with the dense noise removed (`A(M) + Delta`).
    pub fn without_dense_noise(&self) -> DVector<f64> {
        &self.b - &self.noise
    }
}

/// Smallest nonzero singular value of a factor of `mat`, i.e. `sqrt(sigma_r(mat))`.
pub fn factor_sigma_min(mat: &DMatrix<f64>) -> f64 {
    let sv = mat.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0.0;
    }
    let smallest = sv.iter().copied().filter(|&s| s > 1e-10 * top).fold(f64::INFINITY, f64::min);
    smallest.sqrt()
}

/// Generates `b` from `A(M_sharp)` with an outlier fraction and optional dense noise.
pub fn observe(
    ensemble: &MeasurementEnsemble,
    m_sharp: &DMatrix<f64>,
    p_fail: f64,
    outlier_model: OutlierModel,
    dense_noise: DenseNoise,
    seed: u64,
) -> Result<Observation> {
    if !(0.0..0.5).contains(&p_fail) {
        return Err(invalid(format!("p_fail must lie in [0, 1/2), got {p_fail}")));
    }
    let clean = ensemble.apply(m_sharp)?;
    let m = ensemble.m();
    let mut b = clean.clone();

    let (outliers, p_fail) = match outlier_model {
        OutlierModel::None => (Vec::new(), 0.0),
        _ => {
            let count = (p_fail * m as f64).round() as usize;
            let mut rng = rng::stream(seed, "outlier-set");
            (rng::sample_without_replacement(&mut rng, m, count), p_fail)
        }
    };
    let mut rng = rng::stream(seed, "outlier-values");
    for &i in &outliers {
        let g = rng::gaussian(&mut rng);
        b[i] = match outlier_model {
            OutlierModel::AdditiveGaussian { sigma } => clean[i] + sigma * g,
            OutlierModel::ReplaceGaussian { sigma } => sigma * g,
            OutlierModel::None => clean[i],
        };
    }

    let noise = match dense_noise {
        DenseNoise::None => DVector::zeros(m),
        DenseNoise::Scaled { delta } => {
            if delta < 0.0 {
                return Err(invalid("dense noise level must be nonnegative"));
            }
            let mut rng = rng::stream(seed, "dense-noise");
            let e = rng::gaussian_vector(&mut rng, m);
            let norm = e.norm();
            let target = delta * factor_sigma_min(m_sharp);
            if norm > 0.0 {
                e * (target / norm)
            } else {
                e
            }
        }
    };
    b += &noise;
    Ok(Observation { b, outliers, noise, p_fail, clean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, i: usize) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(1, d);
        v[(0, i)] = 1.0;
        v
    }

    #[test]
    fn quadratic_one_measures_diagonal() {
        let ens = MeasurementEnsemble::from_payload(2, 2, Payload::Quadratic(unit(2, 0))).unwrap();
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        assert_eq!(ens.apply(&m).unwrap()[0], 1.0);
    }

    #[test]
    fn gaussian_identity_is_trace() {
        let ens = MeasurementEnsemble::from_payload(
            2,
            2,
            Payload::gaussian_from(&[DMatrix::identity(2, 2)]),
        )
        .unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(ens.apply(&m).unwrap()[0], 5.0);
    }

    #[test]
    fn symmetrized_quadratic_difference() {
        let ens = MeasurementEnsemble::from_payload(
            2,
            2,
            Payload::SymmetrizedQuadratic(unit(2, 0), unit(2, 1)),
        )
        .unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(ens.apply(&m).unwrap()[0], -1.0);
    }

    #[test]
    fn bilinear_adjoint_is_rank_one_sum() {
        let ens =
            MeasurementEnsemble::from_payload(2, 2, Payload::Bilinear(unit(2, 0), unit(2, 1))).unwrap();
        let adj = ens.adjoint(&DVector::from_vec(vec![3.0])).unwrap();
        // brute force: sum_i v_i p_i q_i^T
        let expected = unit(2, 0).transpose() * unit(2, 1) * 3.0;
        assert_eq!(adj, expected);
        assert_eq!(adj[(0, 1)], 3.0);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let ens = make_ensemble(EnsembleKind::Bilinear, 3, 2, 5.0, 1).unwrap();
        let z = ens.adjoint(&DVector::zeros(5)).unwrap();
        assert_eq!(z, DMatrix::zeros(3, 2));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = make_ensemble(EnsembleKind::Bilinear, 3, 2, 5.0, 1).unwrap();
        let b = make_ensemble(EnsembleKind::Bilinear, 3, 2, 5.0, 1).unwrap();
        assert_eq!(a, b);
        let c = make_ensemble(EnsembleKind::Bilinear, 3, 2, 5.0, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_mask_observes_every_entry() {
        let ens = make_ensemble(EnsembleKind::EntrywiseMask, 4, 4, 1.0, 9).unwrap();
        assert_eq!(ens.m(), 16);
        let entries = ens.mask_entries().unwrap();
        assert_eq!(entries[0], (0, 0));
        assert_eq!(entries[5], (1, 1));
    }

    #[test]
    fn mask_is_symmetric() {
        let ens = make_ensemble(EnsembleKind::EntrywiseMask, 12, 12, 0.3, 4).unwrap();
        let e = ens.mask_entries().unwrap();
        for &(i, j) in e {
            assert!(e.binary_search(&(j, i)).is_ok());
        }
    }

    #[test]
    fn quadratic_measurement_count_from_multiplier() {
        let ens = make_ensemble(EnsembleKind::QuadraticI, 100, 100, 800.0, 7).unwrap();
        assert_eq!(ens.m(), 800);
        match ens.payload() {
            Payload::Quadratic(p) => assert_eq!(p.shape(), (800, 100)),
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_ensemble(EnsembleKind::QuadraticI, 3, 4, 5.0, 0).is_err());
        assert!(make_ensemble(EnsembleKind::EntrywiseMask, 3, 3, 0.0, 0).is_err());
        assert!(make_ensemble(EnsembleKind::Bilinear, 0, 4, 5.0, 0).is_err());
        assert!(make_ensemble(EnsembleKind::Bilinear, 3, 4, 0.0, 0).is_err());
        let ens = make_ensemble(EnsembleKind::Bilinear, 3, 4, 5.0, 0).unwrap();
        assert!(ens.apply(&DMatrix::zeros(4, 3)).is_err());
        assert!(ens.adjoint(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn lowrank_apply_matches_dense_apply() {
        let mut rng = rng::stream(5, "t");
        for kind in [
            EnsembleKind::GaussianSensing,
            EnsembleKind::QuadraticI,
            EnsembleKind::QuadraticII,
            EnsembleKind::Bilinear,
            EnsembleKind::EntrywiseMask,
        ] {
            let m_or_p = if kind == EnsembleKind::EntrywiseMask { 0.5 } else { 13.0 };
            let ens = make_ensemble(kind, 5, 5, m_or_p, 3).unwrap();
            let l = rng::gaussian_matrix(&mut rng, 5, 2);
            let r = rng::gaussian_matrix(&mut rng, 5, 2);
            let dense = ens.apply(&(&l * r.transpose())).unwrap();
            let fact = ens.apply_lowrank(&l, &r).unwrap();
            assert!((dense - fact).norm() < 1e-10, "{kind}");
            let v = rng::gaussian_vector(&mut rng, ens.m());
            let adj = ens.adjoint(&v).unwrap();
            assert!((&adj * &r - ens.adjoint_mul(&v, &r).unwrap()).norm() < 1e-10);
            assert!((adj.transpose() * &l - ens.adjoint_t_mul(&v, &l).unwrap()).norm() < 1e-10);
        }
    }

    #[test]
    fn observation_without_corruption_is_clean() {
        let ens = make_ensemble(EnsembleKind::QuadraticII, 4, 4, 10.0, 1).unwrap();
        let m = DMatrix::identity(4, 4);
        let obs = observe(&ens, &m, 0.0, OutlierModel::default(), DenseNoise::None, 3).unwrap();
        assert_eq!(obs.b, obs.clean);
        assert!(obs.outliers.is_empty());
    }

    #[test]
    fn outlier_count_rounds_fraction() {
        let ens = make_ensemble(EnsembleKind::QuadraticII, 4, 4, 8.0, 1).unwrap();
        let m = DMatrix::identity(4, 4);
        let obs = observe(&ens, &m, 0.25, OutlierModel::default(), DenseNoise::None, 3).unwrap();
        assert_eq!(obs.outliers.len(), 2);
        for i in 0..8 {
            if obs.outliers.binary_search(&i).is_err() {
                assert_eq!(obs.b[i], obs.clean[i]);
            }
        }
        assert!(observe(&ens, &m, 0.5, OutlierModel::default(), DenseNoise::None, 3).is_err());
        assert!(observe(&ens, &m, -0.1, OutlierModel::default(), DenseNoise::None, 3).is_err());
    }

    #[test]
    fn dense_noise_rescaling_is_exact() {
        let ens = make_ensemble(EnsembleKind::QuadraticI, 3, 3, 30.0, 2).unwrap();
        // X = [e1 e2] so sigma_r(X) = 1
        let mut x = DMatrix::zeros(3, 2);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 1.0;
        let m = &x * x.transpose();
        let obs =
            observe(&ens, &m, 0.0, OutlierModel::None, DenseNoise::Scaled { delta: 0.1 }, 5).unwrap();
        assert!((obs.noise.norm() - 0.1).abs() < 1e-12);
        assert!((&obs.b - &obs.clean - &obs.noise).norm() < 1e-15);
    }
}
