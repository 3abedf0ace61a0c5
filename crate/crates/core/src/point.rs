//! Decision variables and their blockwise-Euclidean geometry.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, Result};

/// Shape tag of a [`Point`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeTag {
    Sym,
    Asym,
    FactorSparse,
}

/// A decision variable.
///
/// * `Sym(X)`: `X` is `d x r`, the lifted matrix is `X X^T`.
/// * `Asym(X, Y)`: `X` is `d1 x r`, `Y` is `r x d2`, the lifted matrix is `X Y`.
/// * `FactorSparse(X, S)`: `X` is `d x r`, `S` is `d x d`; the low-rank part is `X X^T`.
#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Sym(DMatrix<f64>),
    Asym(DMatrix<f64>, DMatrix<f64>),
    FactorSparse(DMatrix<f64>, DMatrix<f64>),
}

impl Point {
    pub fn shape(&self) -> ShapeTag {
        match self {
            Point::Sym(_) => ShapeTag::Sym,
            Point::Asym(..) => ShapeTag::Asym,
            Point::FactorSparse(..) => ShapeTag::FactorSparse,
        }
    }

    /// The factor `X` (first block).
    pub fn factor(&self) -> &DMatrix<f64> {
        match self {
            Point::Sym(x) | Point::Asym(x, _) | Point::FactorSparse(x, _) => x,
        }
    }

    /// Second block, if any.
    pub fn second(&self) -> Option<&DMatrix<f64>> {
        match self {
            Point::Sym(_) => None,
            Point::Asym(_, y) | Point::FactorSparse(_, y) => Some(y),
        }
    }

    pub fn rank(&self) -> usize {
        self.factor().ncols()
    }

    /// The low-rank matrix this point represents.
    pub fn lifted(&self) -> DMatrix<f64> {
        match self {
            Point::Sym(x) | Point::FactorSparse(x, _) => x * x.transpose(),
            Point::Asym(x, y) => x * y,
        }
    }

    fn same_layout(&self, other: &Point) -> bool {
        self.shape() == other.shape()
            && self.factor().shape() == other.factor().shape()
            && self.second().map(|m| m.shape()) == other.second().map(|m| m.shape())
    }

    pub fn check_layout(&self, other: &Point) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(dim(format!(
                "point layouts differ: {:?} {:?} vs {:?} {:?}",
                self.shape(),
                self.factor().shape(),
                other.shape(),
                other.factor().shape()
            )))
        }
    }

    fn zip(&self, other: &Point, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> Point {
        debug_assert!(self.same_layout(other));
        match (self, other) {
            (Point::Sym(a), Point::Sym(b)) => Point::Sym(f(a, b)),
            (Point::Asym(a, c), Point::Asym(b, e)) => Point::Asym(f(a, b), f(c, e)),
            (Point::FactorSparse(a, c), Point::FactorSparse(b, e)) => {
                Point::FactorSparse(f(a, b), f(c, e))
            }
            _ => unreachable!("layout checked by caller"),
        }
    }

    pub fn map(&self, mut f: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>) -> Point {
        match self {
            Point::Sym(a) => Point::Sym(f(a)),
            Point::Asym(a, b) => Point::Asym(f(a), f(b)),
            Point::FactorSparse(a, b) => Point::FactorSparse(f(a), f(b)),
        }
    }

    pub fn add(&self, other: &Point) -> Point {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Point) -> Point {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Point {
        self.map(|a| a * s)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Point) -> Point {
        self.zip(other, |a, b| a + b * alpha)
    }

    pub fn zeros_like(&self) -> Point {
        self.map(|a| DMatrix::zeros(a.nrows(), a.ncols()))
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert!(self.same_layout(other));
        let first = self.factor().dot(other.factor());
        match (self.second(), other.second()) {
            (Some(a), Some(b)) => first + a.dot(b),
            _ => first,
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Number of scalar coordinates.
    pub fn len(&self) -> usize {
        self.factor().len() + self.second().map_or(0, |m| m.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column-major coordinates of the first block followed by the second.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.factor().as_slice());
        if let Some(s) = self.second() {
            v.extend_from_slice(s.as_slice());
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`Point::to_vector`] using `self` as the layout template.
    pub fn with_coordinates(&self, v: &[f64]) -> Point {
        assert_eq!(v.len(), self.len());
        let x = self.factor();
        let nx = x.len();
        let first = DMatrix::from_column_slice(x.nrows(), x.ncols(), &v[..nx]);
        match self {
            Point::Sym(_) => Point::Sym(first),
            Point::Asym(_, y) => {
                Point::Asym(first, DMatrix::from_column_slice(y.nrows(), y.ncols(), &v[nx..]))
            }
            Point::FactorSparse(_, s) => Point::FactorSparse(
                first,
                DMatrix::from_column_slice(s.nrows(), s.ncols(), &v[nx..]),
            ),
        }
    }

    /// Row-wise layout used by the `||.||_{2,1}` norm: rows of `X`, then rows of `Y^T`
    /// (or of `S`). Returns per-row Euclidean norms.
    pub fn row_norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.factor().row_iter().map(|r| r.norm()).collect();
        match self {
            Point::Sym(_) => {}
            Point::Asym(_, y) => out.extend(y.column_iter().map(|c| c.norm())),
            Point::FactorSparse(_, s) => out.extend(s.row_iter().map(|r| r.norm())),
        }
        out
    }

    /// Scales each row (in the [`Point::row_norms`] layout) by the given factor.
    pub fn scale_rows(&self, factors: &[f64]) -> Point {
        let x = self.factor();
        let mut first = x.clone();
        for (i, f) in factors.iter().take(x.nrows()).enumerate() {
            first.row_mut(i).scale_mut(*f);
        }
        let rest = &factors[x.nrows()..];
        match self {
            Point::Sym(_) => Point::Sym(first),
            Point::Asym(_, y) => {
                let mut y = y.clone();
                for (j, f) in rest.iter().enumerate() {
                    y.column_mut(j).scale_mut(*f);
                }
                Point::Asym(first, y)
            }
            Point::FactorSparse(_, s) => {
                let mut s = s.clone();
                for (i, f) in rest.iter().enumerate() {
                    s.row_mut(i).scale_mut(*f);
                }
                Point::FactorSparse(first, s)
            }
        }
    }

    /// `sum of row norms` in the [`Point::row_norms`] layout.
    pub fn norm_21(&self) -> f64 {
        self.row_norms().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.factor().iter().all(|v| v.is_finite())
            && self.second().is_none_or(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_round_trip() {
        let p = Point::Asym(
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 3, &[3.0, 4.0, 5.0]),
        );
        let v = p.to_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.with_coordinates(v.as_slice()), p);
    }

    #[test]
    fn blockwise_norm() {
        let p = Point::Asym(DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 4.0));
        assert_eq!(p.norm(), 5.0);
        assert_eq!(p.norm_21(), 7.0);
    }

    #[test]
    fn row_scaling_matches_layout() {
        let p = Point::Sym(DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, 0.0]));
        assert_eq!(p.row_norms(), vec![5.0, 1.0]);
        let q = p.scale_rows(&[0.5, 2.0]);
        assert_eq!(q.factor(), &DMatrix::from_row_slice(2, 2, &[1.5, 2.0, 2.0, 0.0]));
    }
}
