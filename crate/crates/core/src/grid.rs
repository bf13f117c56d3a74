//! Discretized phase space.
//!
//! A [`PhaseGrid`] samples `n` position axes and `n` momentum axes with `N`
//! points each. Position and momentum spacings are tied together by
//! `dx * dp * N = 2*pi*hbar`, which makes the discrete Fourier transform
//! between the two representations unitary. Coordinates are centred:
//! `x_j = (j - N/2) dx` and `p_k = (k - N/2) dp`, so the origin is a grid
//! point and the grid is periodic in both directions.
//!
//! Arrays over the full phase space are stored as `D x D` matrices with
//! `D = N^n`: the row is the position multi-index, the column the momentum
//! multi-index. For `n = 2` the multi-index is `j1 * N + j2`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A point `z = (x, p)` of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: p.len(),
            });
        }
        if x.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("phase point has non-finite entries".into()));
        }
        Ok(Self { x, p })
    }

    /// One degree of freedom.
    pub fn new1(x: f64, p: f64) -> Self {
        Self { x: vec![x], p: vec![p] }
    }

    pub fn dof(&self) -> usize {
        self.x.len()
    }

    /// Flattened `(x_1..x_n, p_1..p_n)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.x.iter().chain(&self.p).copied().collect()
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self {
            x: z[..n].to_vec(),
            p: z[n..].to_vec(),
        }
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform periodic phase-space grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    dof: usize,
    points: usize,
    x_extent: f64,
    hbar: f64,
}

impl PhaseGrid {
    /// Grid with position half-width `x_extent`; the momentum half-width
    /// follows from the Fourier pairing.
    pub fn new(dof: usize, points_per_axis: usize, x_extent: f64, hbar: f64) -> Result<Self> {
        if !(1..=2).contains(&dof) {
            return Err(Error::InvalidGrid(format!("dof must be 1 or 2, got {dof}")));
        }
        if points_per_axis < 16 || points_per_axis % 4 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a multiple of 4 and at least 16, got {points_per_axis}"
            )));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidGrid(format!("hbar must be positive, got {hbar}")));
        }
        if !(x_extent > 0.0 && x_extent.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "x_extent must be positive, got {x_extent}"
            )));
        }
        Ok(Self {
            dof,
            points: points_per_axis,
            x_extent,
            hbar,
        })
    }

    /// Grid with equal spacing in position and momentum, `dx = dp = sqrt(2 pi hbar / N)`.
    pub fn symmetric(dof: usize, points_per_axis: usize, hbar: f64) -> Result<Self> {
        let dx = (2.0 * PI * hbar / points_per_axis as f64).sqrt();
        Self::new(dof, points_per_axis, dx * points_per_axis as f64 / 2.0, hbar)
    }

    /// Grid from both half-widths; fails unless they satisfy the Fourier pairing.
    pub fn with_extents(
        dof: usize,
        points_per_axis: usize,
        x_extent: f64,
        p_extent: f64,
        hbar: f64,
    ) -> Result<Self> {
        let grid = Self::new(dof, points_per_axis, x_extent, hbar)?;
        let rel = (grid.p_extent() - p_extent).abs() / grid.p_extent();
        if rel > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "p_extent {p_extent} inconsistent with dx*dp*N = 2*pi*hbar (expected {})",
                grid.p_extent()
            )));
        }
        Ok(grid)
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn x_extent(&self) -> f64 {
        self.x_extent
    }

    pub fn p_extent(&self) -> f64 {
        self.points as f64 * self.dp() / 2.0
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_extent / self.points as f64
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI * self.hbar / (self.points as f64 * self.dx())
    }

    /// Configuration-space dimension `N^n`.
    pub fn dim(&self) -> usize {
        self.points.pow(self.dof as u32)
    }

    /// Phase-space cell volume `(dx dp)^n`.
    pub fn cell_volume(&self) -> f64 {
        (self.dx() * self.dp()).powi(self.dof as i32)
    }

    /// Configuration-space cell volume `dx^n`.
    pub fn config_volume(&self) -> f64 {
        self.dx().powi(self.dof as i32)
    }

    /// `(2 pi hbar)^n`.
    pub fn planck_cell(&self) -> f64 {
        (2.0 * PI * self.hbar).powi(self.dof as i32)
    }

    /// Position of sample `j` along one axis.
    pub fn x_at(&self, j: usize) -> f64 {
        (j as f64 - (self.points / 2) as f64) * self.dx()
    }

    pub fn p_at(&self, k: usize) -> f64 {
        (k as f64 - (self.points / 2) as f64) * self.dp()
    }

    pub fn x_axis(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x_at(j)).collect()
    }

    pub fn p_axis(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.p_at(k)).collect()
    }

    /// Split a multi-index into per-axis indices.
    pub fn unravel(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dof];
        let mut rest = index;
        for axis in (0..self.dof).rev() {
            out[axis] = rest % self.points;
            rest /= self.points;
        }
        out
    }

    pub fn ravel(&self, indices: &[usize]) -> usize {
        indices.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    /// Position vector of a configuration multi-index.
    pub fn position(&self, index: usize) -> Vec<f64> {
        self.unravel(index).into_iter().map(|j| self.x_at(j)).collect()
    }

    pub fn momentum(&self, index: usize) -> Vec<f64> {
        self.unravel(index).into_iter().map(|k| self.p_at(k)).collect()
    }

    /// Phase point at (position multi-index, momentum multi-index).
    pub fn point(&self, xi: usize, pi: usize) -> PhasePoint {
        PhasePoint {
            x: self.position(xi),
            p: self.momentum(pi),
        }
    }

    /// Sample a function of phase space onto the grid.
    pub fn sample<F: Fn(&[f64], &[f64]) -> f64>(&self, f: F) -> Array2<f64> {
        let d = self.dim();
        let xs: Vec<Vec<f64>> = (0..d).map(|i| self.position(i)).collect();
        let ps: Vec<Vec<f64>> = (0..d).map(|i| self.momentum(i)).collect();
        Array2::from_shape_fn((d, d), |(i, k)| f(&xs[i], &ps[k]))
    }

    /// Nearest grid index to a coordinate along one axis, ignoring periodicity.
    pub fn nearest_x(&self, x: f64) -> Option<usize> {
        let j = (x / self.dx()).round() + (self.points / 2) as f64;
        (j >= 0.0 && j < self.points as f64).then_some(j as usize)
    }

    pub fn nearest_p(&self, p: f64) -> Option<usize> {
        let k = (p / self.dp()).round() + (self.points / 2) as f64;
        (k >= 0.0 && k < self.points as f64).then_some(k as usize)
    }

    pub fn contains(&self, z: &PhasePoint) -> bool {
        z.dof() == self.dof
            && z.x.iter().all(|x| x.abs() <= self.x_extent)
            && z.p.iter().all(|p| p.abs() <= self.p_extent())
    }

    /// Whether a multi-index touches the outermost two cells on any axis.
    pub fn in_outer_shell(&self, index: usize) -> bool {
        let n = self.points;
        self.unravel(index).into_iter().any(|j| j < 2 || j >= n - 2)
    }

    /// Total `|W| dz` in the outer two-cell shell of phase space.
    pub fn shell_mass(&self, values: &Array2<f64>) -> f64 {
        let shell: Vec<bool> = (0..self.dim()).map(|i| self.in_outer_shell(i)).collect();
        let mut mass = 0.0;
        for ((i, k), v) in values.indexed_iter() {
            if shell[i] || shell[k] {
                mass += v.abs();
            }
        }
        mass * self.cell_volume()
    }

    pub fn check_containment(&self, values: &Array2<f64>) -> Result<()> {
        let shell_mass = self.shell_mass(values);
        if shell_mass < 1e-6 {
            Ok(())
        } else {
            Err(Error::Containment { shell_mass })
        }
    }

    pub fn ensure_same(&self, other: &PhaseGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// One-axis grid with the same spacing, used for composite bookkeeping.
    pub fn axis_grid(&self) -> PhaseGrid {
        PhaseGrid { dof: 1, ..*self }
    }

    /// Two-dof grid built as the Cartesian product of this one-dof grid with itself.
    pub fn product(&self) -> Result<PhaseGrid> {
        if self.dof != 1 {
            return Err(Error::InvalidGrid("product requires a one-dof grid".into()));
        }
        Ok(PhaseGrid { dof: 2, ..*self })
    }
}
