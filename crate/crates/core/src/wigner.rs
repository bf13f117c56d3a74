//! Quantum states and observables in both pictures, and the maps between them.
//!
//! Operator matrices are taken in the orthonormal position basis, so the
//! identity operator is the identity matrix and a pure state is
//! `rho = psi psi^H dx^n`. Wavefunctions carry continuum normalization
//! `sum |psi|^2 dx^n = 1`.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::linalg::{self, Eigh};
use crate::spectral::C64;
use crate::weyl::{kernel_to_symbol, symbol_to_kernel};

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WaveFunction {
    grid: PhaseGrid,
    values: Array1<C64>,
    norm: f64,
}

impl WaveFunction {
    pub fn new(grid: &PhaseGrid, values: Array1<C64>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: values.len(),
            });
        }
        let norm = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.dx().powi(grid.dof() as i32)).sqrt();
        Ok(Self {
            grid: *grid,
            values,
            norm,
        })
    }

    /// Sample `f` at the configuration grid points and normalize.
    pub fn from_fn<F: Fn(&[f64]) -> C64>(grid: &PhaseGrid, f: F) -> Result<Self> {
        let values = (0..grid.dim()).map(|i| f(&grid.position(i))).collect();
        Self::new(grid, values)?.normalized()
    }

    /// Build from a unit vector in the orthonormal position basis.
    pub fn from_unit_vector(grid: &PhaseGrid, v: Array1<C64>) -> Result<Self> {
        let s = grid.dx().powf(-(grid.dof() as f64) / 2.0);
        Self::new(grid, v.mapv(|c| c * s))?.normalized()
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array1<C64> {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm - 1.0).abs() < NORM_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        if !(self.norm > 0.0) || !self.norm.is_finite() {
            return Err(Error::InvalidArgument("wavefunction has zero norm".into()));
        }
        Self::new(&self.grid, self.values.mapv(|v| v / self.norm))
    }

    /// Components in the orthonormal position basis.
    pub fn unit_vector(&self) -> Array1<C64> {
        let s = self.grid.dx().powf(self.grid.dof() as f64 / 2.0);
        self.values.mapv(|v| v * s)
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &WaveFunction) -> Result<C64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(linalg::inner(&self.unit_vector(), &other.unit_vector()))
    }

    /// Probability density `|psi(x)|^2` per configuration point.
    pub fn density(&self) -> Array1<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    /// Momentum-space amplitudes on the momentum axis, `sum |phi|^2 dp^n = 1`.
    pub fn momentum_amplitudes(&self) -> Array1<C64> {
        let g = &self.grid;
        let n = g.points();
        // phi(p_k) = (2 pi hbar)^{-n/2} sum_j e^{-i x_j p_k / hbar} psi(x_j) dx^n
        let phase_1d = Array2::from_shape_fn((n, n), |(k, j)| {
            C64::from_polar(1.0, -g.x_at(j) * g.p_at(k) / g.hbar())
        });
        let pref = (2.0 * PI * g.hbar()).powf(-(g.dof() as f64) / 2.0) * g.dx().powi(g.dof() as i32);
        let out = match g.dof() {
            1 => phase_1d.dot(&self.values),
            _ => {
                let m = self.values.clone().into_shape_with_order((n, n)).unwrap();
                phase_1d.dot(&m).dot(&phase_1d.t()).into_shape_with_order(n * n).unwrap()
            }
        };
        out.mapv(|v| v * pref)
    }

    pub fn density_operator(&self) -> DensityOperator {
        let v = self.unit_vector();
        let col = v.view().insert_axis(Axis(1));
        let row = v.mapv(|c| c.conj()).insert_axis(Axis(0));
        DensityOperator {
            grid: self.grid,
            matrix: col.dot(&row),
        }
    }
}

/// Normalized Gaussian `|x0, p0>` with position variance `hbar / 2` per axis.
pub fn coherent_state(x0: &[f64], p0: &[f64], grid: &PhaseGrid) -> Result<WaveFunction> {
    let n = grid.dof();
    if x0.len() != n || p0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len().max(p0.len()),
        });
    }
    let sigma = (grid.hbar() / 2.0).sqrt();
    for a in 0..n {
        if x0[a].abs() + 6.0 * sigma > grid.x_extent() || p0[a].abs() + 6.0 * sigma > grid.p_extent() {
            return Err(Error::InvalidArgument(format!(
                "coherent state at x = {:?}, p = {:?} violates 6-sigma containment (sigma = {sigma:.4})",
                x0, p0
            )));
        }
    }
    let h = grid.hbar();
    WaveFunction::from_fn(grid, |x| {
        let mut arg = C64::new(0.0, 0.0);
        for a in 0..n {
            let d = x[a] - x0[a];
            arg += C64::new(-d * d / (2.0 * h), p0[a] * (x[a] - x0[a] / 2.0) / h);
        }
        arg.exp()
    })
}

#[derive(Debug, Clone)]
pub struct DensityOperator {
    grid: PhaseGrid,
    matrix: Array2<C64>,
}

impl DensityOperator {
    /// Validated constructor: Hermitian and unit trace to 1e-10, spectrum above -1e-8.
    pub fn new(grid: &PhaseGrid, matrix: Array2<C64>) -> Result<Self> {
        let rho = Self::unchecked(grid, matrix)?;
        let deviation = linalg::hermiticity_defect(&rho.matrix);
        if deviation > NORM_TOL {
            return Err(Error::NonHermitian { deviation });
        }
        let tr = linalg::trace(&rho.matrix);
        if (tr.re - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!("density trace is {:.12}, expected 1", tr.re)));
        }
        let min_eigenvalue = Eigh::new(&rho.matrix)?.min();
        if min_eigenvalue < -1e-8 {
            return Err(Error::NotPositive { min_eigenvalue });
        }
        Ok(rho)
    }

    /// Shape-checked constructor without the spectral checks.
    pub fn unchecked(grid: &PhaseGrid, matrix: Array2<C64>) -> Result<Self> {
        let d = grid.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows(),
            });
        }
        Ok(Self { grid: *grid, matrix })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }

    pub fn purity(&self) -> f64 {
        linalg::trace(&self.matrix.dot(&self.matrix)).re
    }

    /// Convex combination `w rho + (1 - w) other`.
    pub fn mix(&self, other: &DensityOperator, w: f64) -> Result<DensityOperator> {
        self.grid.ensure_same(&other.grid)?;
        Ok(DensityOperator {
            grid: self.grid,
            matrix: &self.matrix * C64::new(w, 0.0) + &other.matrix * C64::new(1.0 - w, 0.0),
        })
    }
}

#[derive(Debug, Clone)]
pub struct WignerState {
    grid: PhaseGrid,
    values: Array2<f64>,
}

impl WignerState {
    pub fn new(grid: &PhaseGrid, values: Array2<f64>) -> Result<Self> {
        let d = grid.dim();
        if values.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.nrows(),
            });
        }
        Ok(Self { grid: *grid, values })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn hbar(&self) -> f64 {
        self.grid.hbar()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.cell_volume()
    }

    /// `(pi hbar)^{-n}`, the continuum bound on `|W|` for pure states.
    pub fn sup_bound(&self) -> f64 {
        (PI * self.grid.hbar()).powi(-(self.grid.dof() as i32))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Convex combination `w self + (1 - w) other`.
    pub fn mix(&self, other: &WignerState, w: f64) -> Result<WignerState> {
        self.grid.ensure_same(&other.grid)?;
        Ok(WignerState {
            grid: self.grid,
            values: &self.values * w + &other.values * (1.0 - w),
        })
    }
}

#[derive(Debug, Clone)]
pub struct WeylSymbol {
    grid: PhaseGrid,
    values: Array2<C64>,
    hermitian: bool,
}

impl WeylSymbol {
    pub fn new(grid: &PhaseGrid, values: Array2<C64>) -> Result<Self> {
        let d = grid.dim();
        if values.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.nrows(),
            });
        }
        let hermitian = values.iter().all(|v| v.im.abs() <= NORM_TOL);
        Ok(Self {
            grid: *grid,
            values,
            hermitian,
        })
    }

    pub fn real(grid: &PhaseGrid, values: Array2<f64>) -> Result<Self> {
        Self::new(grid, values.mapv(|v| C64::new(v, 0.0)))
    }

    /// Real symbol sampled from a phase-space function.
    pub fn from_fn<F: Fn(&[f64], &[f64]) -> f64>(grid: &PhaseGrid, f: F) -> Self {
        Self::real(grid, grid.sample(f)).expect("sampled on its own grid")
    }

    pub fn constant(grid: &PhaseGrid, c: f64) -> Self {
        Self::from_fn(grid, |_, _| c)
    }

    pub fn position(grid: &PhaseGrid, axis: usize) -> Self {
        Self::from_fn(grid, |x, _| x[axis])
    }

    pub fn momentum(grid: &PhaseGrid, axis: usize) -> Self {
        Self::from_fn(grid, |_, p| p[axis])
    }

    /// `(|x|^2 + |p|^2) / 2`.
    pub fn oscillator(grid: &PhaseGrid) -> Self {
        Self::from_fn(grid, |x, p| {
            0.5 * (x.iter().map(|v| v * v).sum::<f64>() + p.iter().map(|v| v * v).sum::<f64>())
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<C64> {
        &self.values
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Real part; fails for a non-Hermitian symbol.
    pub fn real_values(&self) -> Result<Array2<f64>> {
        if !self.hermitian {
            return Err(Error::NonHermitian {
                deviation: self.max_imag(),
            });
        }
        Ok(self.values.mapv(|v| v.re))
    }
}

fn wigner_scale(grid: &PhaseGrid) -> f64 {
    (2.0 * PI * grid.hbar()).powi(grid.dof() as i32)
}

fn real_part_checked(s: Array2<C64>) -> Result<Array2<f64>> {
    let deviation = s.iter().fold(0.0, |m: f64, v| m.max(v.im.abs()));
    if deviation > 1e-8 {
        return Err(Error::NonHermitian { deviation });
    }
    Ok(s.mapv(|v| v.re))
}

pub fn wigner_from_wavefunction(psi: &WaveFunction) -> Result<WignerState> {
    if !psi.is_normalized() {
        return Err(Error::InvalidArgument(format!(
            "wavefunction norm is {:.12}, expected 1",
            psi.norm()
        )));
    }
    let w = wigner_from_density(&psi.density_operator())?;
    psi.grid.check_containment(&w.values)?;
    Ok(w)
}

pub fn wigner_from_density(rho: &DensityOperator) -> Result<WignerState> {
    let deviation = linalg::hermiticity_defect(&rho.matrix);
    if deviation > NORM_TOL {
        return Err(Error::NonHermitian { deviation });
    }
    let s = kernel_to_symbol(&rho.matrix, &rho.grid)?;
    let scale = 1.0 / wigner_scale(&rho.grid);
    WignerState::new(&rho.grid, real_part_checked(s)?.mapv(|v| v * scale))
}

pub fn density_from_wigner(w: &WignerState) -> Result<DensityOperator> {
    let scale = wigner_scale(&w.grid);
    let s = w.values.mapv(|v| C64::new(v * scale, 0.0));
    let mut m = symbol_to_kernel(&s, &w.grid)?;
    // The exact map returns a Hermitian matrix up to rounding; enforce it.
    m = (&m + &linalg::adjoint(&m)).mapv(|v| v * 0.5);
    DensityOperator::unchecked(&w.grid, m)
}

/// Pure state from its Wigner function, phase fixed by `arg psi(0) = 0`.
pub fn wavefunction_from_wigner(w: &WignerState) -> Result<WaveFunction> {
    let g = w.grid;
    let origin = g.ravel(&vec![g.points() / 2; g.dof()]);
    let rho = density_from_wigner(w)?;
    let vol = g.dx().powi(g.dof() as i32);
    let value = rho.matrix[[origin, origin]].re / vol;
    if !(value > 1e-6) {
        return Err(Error::RecoveryThreshold { value });
    }
    let psi0 = value.sqrt();
    let values = rho.matrix.column(origin).mapv(|v| v / (vol * psi0));
    WaveFunction::new(&g, values)?.normalized()
}

pub fn weyl_operator_from_symbol(a: &WeylSymbol) -> Result<Array2<C64>> {
    let mut m = symbol_to_kernel(&a.values, &a.grid)?;
    if a.hermitian {
        m = (&m + &linalg::adjoint(&m)).mapv(|v| v * 0.5);
    }
    Ok(m)
}

pub fn weyl_symbol_from_operator(op: &Array2<C64>, grid: &PhaseGrid) -> Result<WeylSymbol> {
    WeylSymbol::new(grid, kernel_to_symbol(op, grid)?)
}

/// `<A> = integral of A W dz`.
pub fn mean_value(a: &WeylSymbol, w: &WignerState) -> Result<f64> {
    a.grid.ensure_same(&w.grid)?;
    let av = a.real_values()?;
    Ok((&av * &w.values).sum() * w.grid.cell_volume())
}

/// `|<psi|psi'>|^2 = (2 pi hbar)^n integral of W W' dz`, clipped to `[0, 1]`.
pub fn overlap(w: &WignerState, w2: &WignerState) -> Result<f64> {
    w.grid.ensure_same(&w2.grid)?;
    let raw = (&w.values * &w2.values).sum() * w.grid.cell_volume() * wigner_scale(&w.grid);
    let clipped = raw.clamp(0.0, 1.0);
    if clipped != raw {
        warn!("overlap {raw:.3e} clipped to {clipped}");
    }
    Ok(clipped)
}

/// Position and momentum densities, each over its own multi-index.
pub fn marginals(w: &WignerState) -> (Array1<f64>, Array1<f64>) {
    let g = &w.grid;
    let n = g.dof() as i32;
    let pos = w.values.sum_axis(Axis(1)) * g.dp().powi(n);
    let mom = w.values.sum_axis(Axis(0)) * g.dx().powi(n);
    (pos, mom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(1, 64, 6.0, 0.5).unwrap()
    }

    #[test]
    fn coherent_wigner_is_closed_form_gaussian() {
        let g = grid();
        let psi = coherent_state(&[0.7], &[-0.4], &g).unwrap();
        let w = wigner_from_wavefunction(&psi).unwrap();
        let h = g.hbar();
        let exact = g.sample(|x, p| {
            ((-(x[0] - 0.7).powi(2) - (p[0] + 0.4).powi(2)) / h).exp() / (PI * h)
        });
        assert!((&exact - w.values()).iter().all(|v| v.abs() < 1e-8));
        assert!((w.integral() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cat_state_has_negative_midpoint() {
        // Chords between the lobes must stay shorter than the half period.
        let g = PhaseGrid::new(1, 128, 8.0, 0.5).unwrap();
        let a = coherent_state(&[-1.5], &[0.0], &g).unwrap();
        let b = coherent_state(&[1.5], &[0.0], &g).unwrap();
        let odd = WaveFunction::new(&g, a.values() - b.values()).unwrap().normalized().unwrap();
        let w = wigner_from_wavefunction(&odd).unwrap();
        assert!(w.values()[[64, 64]] < 0.0);
        assert!(w.values()[[64, 64]] >= -w.sup_bound() - 1e-6);
    }

    #[test]
    fn recovery_round_trip_and_node_error() {
        let g = grid();
        let psi = coherent_state(&[0.9], &[0.3], &g).unwrap();
        let back = wavefunction_from_wigner(&wigner_from_wavefunction(&psi).unwrap()).unwrap();
        assert!(psi.inner(&back).unwrap().norm() > 1.0 - 1e-10);
        assert!(back.values()[32].im.abs() < 1e-12);
        let h = WeylSymbol::oscillator(&g);
        let e = Eigh::new(&weyl_operator_from_symbol(&h).unwrap()).unwrap();
        let first = WaveFunction::from_unit_vector(&g, e.vectors.column(1).to_owned()).unwrap();
        let w1 = wigner_from_wavefunction(&first).unwrap();
        assert!(matches!(wavefunction_from_wigner(&w1), Err(Error::RecoveryThreshold { .. })));
    }

    #[test]
    fn weyl_basics() {
        let g = grid();
        let one = weyl_operator_from_symbol(&WeylSymbol::constant(&g, 1.0)).unwrap();
        assert!(max_abs(&(&one - &linalg::identity(64))) < 1e-12);
        let h = weyl_operator_from_symbol(&WeylSymbol::oscillator(&g)).unwrap();
        let e = Eigh::new(&h).unwrap();
        for k in 0..6 {
            assert!((e.values[k] - g.hbar() * (k as f64 + 0.5)).abs() < 1e-6);
        }
        let psi = coherent_state(&[0.2], &[1.0], &g).unwrap();
        let s = weyl_symbol_from_operator(psi.density_operator().matrix(), &g).unwrap();
        let w = wigner_from_wavefunction(&psi).unwrap();
        let scaled = w.values() * (2.0 * PI * g.hbar());
        assert!((&s.real_values().unwrap() - &scaled).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn overlaps_and_marginals() {
        let g = grid();
        let a = coherent_state(&[0.0], &[0.0], &g).unwrap();
        let b = coherent_state(&[0.6], &[0.8], &g).unwrap();
        let wa = wigner_from_wavefunction(&a).unwrap();
        let wb = wigner_from_wavefunction(&b).unwrap();
        let expected = (-1.0f64 / (2.0 * g.hbar())).exp();
        assert!((overlap(&wa, &wb).unwrap() - expected).abs() < 1e-10);
        assert_eq!(overlap(&wa, &wb).unwrap(), overlap(&wb, &wa).unwrap());
        assert!((overlap(&wa, &wa).unwrap() - 1.0).abs() < 1e-10);
        let (px, pp) = marginals(&wb);
        let dx = &px - &b.density();
        assert!(dx.iter().all(|v| v.abs() < 1e-10));
        let phi = b.momentum_amplitudes().mapv(|v| v.norm_sqr());
        assert!((&pp - &phi).iter().all(|v| v.abs() < 1e-10));
        assert!((mean_value(&WeylSymbol::position(&g, 0), &wb).unwrap() - 0.6).abs() < 1e-10);
        assert!((mean_value(&WeylSymbol::momentum(&g, 0), &wb).unwrap() - 0.8).abs() < 1e-10);
    }
}
