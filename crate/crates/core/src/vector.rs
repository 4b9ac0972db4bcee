//! Dense real vectors and small symmetric matrices.

use std::ops::Index;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite-valued point in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::param("vector", "dimension must be positive"));
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "entry {i} is not finite ({})",
                entries[i]
            )));
        }
        Ok(Vector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// Wraps entries without validation. Callers check finiteness where it matters.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Vector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Vector) -> Vector {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Vector {
        self.map(|x| c * x)
    }

    /// `(1 - w) * self + w * other`
    pub fn lerp(&self, other: &Vector, w: f64) -> Vector {
        self.zip_map(other, |a, b| (1.0 - w) * a + w * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub(crate) fn to_nalgebra(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub(crate) fn from_nalgebra(v: &DVector<f64>) -> Vector {
        Vector(v.iter().copied().collect())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.0
    }
}

/// Symmetric positive-definite matrix with cached spectral extremes and factorization.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    rows: Vec<Vec<f64>>,
    dense: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    lambda_min: f64,
    lambda_max: f64,
}

impl SpdMatrix {
    /// Validates squareness, symmetry (to `1e-12` relative) and positive definiteness.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::param("A", "matrix must be non-empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param(
                    "A",
                    format!("row {i} has {} entries, expected {n}", row.len()),
                ));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("A", format!("row {i} has a non-finite entry")));
            }
        }
        let dense = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let scale = dense.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (dense[(i, j)] - dense[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::param("A", format!("not symmetric at ({i},{j})")));
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(dense.clone());
        let lambda_min = eig.eigenvalues.min();
        let lambda_max = eig.eigenvalues.max();
        if lambda_min <= 0.0 {
            return Err(Error::param(
                "A",
                format!("not positive definite (smallest eigenvalue {lambda_min:e})"),
            ));
        }
        let chol = nalgebra::Cholesky::new(dense.clone())
            .ok_or_else(|| Error::param("A", "Cholesky factorization failed"))?;
        Ok(SpdMatrix {
            rows,
            dense,
            chol,
            lambda_min,
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn mul(&self, v: &Vector) -> Vector {
        Vector::from_nalgebra(&(&self.dense * v.to_nalgebra()))
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &Vector) -> Vector {
        Vector::from_nalgebra(&self.chol.solve(&b.to_nalgebra()))
    }

    /// `vᵀ A v`
    pub fn quad_form(&self, v: &Vector) -> f64 {
        v.dot(&self.mul(v))
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
    }
}
