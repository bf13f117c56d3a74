//! Dense complex linear algebra helpers.
//!
//! Matrices are `ndarray::Array2<C64>`; decompositions go through nalgebra.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::spectral::C64;

pub fn to_nalgebra(a: &Array2<C64>) -> DMatrix<C64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Columns are eigenvectors.
    pub vectors: Array2<C64>,
}

impl Eigh {
    pub fn new(a: &Array2<C64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        // Symmetrize to kill rounding asymmetry before the solver sees it.
        let h = (a + &a.t().mapv(|v| v.conj())).mapv(|v| v * 0.5);
        let eig = SymmetricEigen::try_new(to_nalgebra(&h), 1e-14, 0).ok_or(Error::EigenFailure)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    /// `V f(Lambda) V^H`.
    pub fn apply_fn<F: Fn(f64) -> C64>(&self, f: F) -> Array2<C64> {
        let scaled = Array2::from_shape_fn(self.vectors.dim(), |(r, c)| {
            self.vectors[[r, c]] * f(self.values[c])
        });
        scaled.dot(&adjoint(&self.vectors))
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

pub fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|v| v.conj())
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.norm()))
}

pub fn hermiticity_defect(a: &Array2<C64>) -> f64 {
    max_abs(&(a - &adjoint(a)))
}

pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().sum()
}

/// Sum of singular values.
pub fn trace_norm(a: &Array2<C64>) -> f64 {
    SVD::new(to_nalgebra(a), false, false).singular_values.sum()
}

/// Largest singular value.
pub fn operator_norm(a: &Array2<C64>) -> f64 {
    SVD::new(to_nalgebra(a), false, false)
        .singular_values
        .iter()
        .fold(0.0, |m: f64, v| m.max(*v))
}

/// Operator norm of a Hermitian matrix via its spectrum.
pub fn hermitian_norm(a: &Array2<C64>) -> Result<f64> {
    let e = Eigh::new(a)?;
    Ok(e.min().abs().max(e.max().abs()))
}

pub fn vec_norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
