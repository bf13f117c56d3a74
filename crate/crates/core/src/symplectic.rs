//! The symplectic structure of `R^{2n}`.

use crate::error::{Error, Result};
use crate::grid::PhasePoint;

/// The block matrix `J = [[0, I], [-I, 0]]` with integer entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymplecticForm {
    dof: usize,
    entries: Vec<i64>,
}

impl SymplecticForm {
    pub fn new(dof: usize) -> Self {
        let dim = 2 * dof;
        let mut entries = vec![0; dim * dim];
        for i in 0..dof {
            entries[i * dim + dof + i] = 1;
            entries[(dof + i) * dim + i] = -1;
        }
        Self { dof, entries }
    }

    pub fn dim(&self) -> usize {
        2 * self.dof
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.entries[row * self.dim() + col]
    }

    /// Exact integer matrix product.
    pub fn square(&self) -> Vec<i64> {
        let d = self.dim();
        let mut out = vec![0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| self.get(i, k) * self.get(k, j)).sum();
            }
        }
        out
    }

    /// `z^T J z'`.
    pub fn apply(&self, z: &[f64], w: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let e = self.get(i, j);
                if e != 0 {
                    acc += e as f64 * z[i] * w[j];
                }
            }
        }
        acc
    }
}

/// `sigma(z, z') = x . p' - p . x'`.
pub fn symplectic_product(z: &PhasePoint, w: &PhasePoint) -> Result<f64> {
    if z.dof() != w.dof() {
        return Err(Error::DimensionMismatch {
            expected: z.dof(),
            got: w.dof(),
        });
    }
    Ok(z.x.iter().zip(&w.p).map(|(a, b)| a * b).sum::<f64>()
        - z.p.iter().zip(&w.x).map(|(a, b)| a * b).sum::<f64>())
}
