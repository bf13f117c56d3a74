//! Classical observables, Poisson brackets and Hamiltonian flow.

use ndarray::Array2;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::grid::{PhaseGrid, PhasePoint};
use crate::spectral;

/// Sparse real polynomial in `(x_1..x_n, p_1..p_n)`.
///
/// Keys are exponent vectors of length `2n`, positions first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dof: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(dof: usize) -> Self {
        Self {
            dof,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dof: usize, c: f64) -> Self {
        Self::zero(dof).with_term(c, vec![0; 2 * dof])
    }

    pub fn monomial(coef: f64, x_pow: &[u32], p_pow: &[u32]) -> Self {
        let dof = x_pow.len();
        assert_eq!(dof, p_pow.len(), "exponent vectors must match");
        Self::zero(dof).with_term(coef, [x_pow, p_pow].concat())
    }

    pub fn x(dof: usize, axis: usize) -> Self {
        let mut e = vec![0; 2 * dof];
        e[axis] = 1;
        Self::zero(dof).with_term(1.0, e)
    }

    pub fn p(dof: usize, axis: usize) -> Self {
        let mut e = vec![0; 2 * dof];
        e[dof + axis] = 1;
        Self::zero(dof).with_term(1.0, e)
    }

    /// `(|x|^2 + |p|^2) / 2`.
    pub fn oscillator(dof: usize) -> Self {
        (0..dof).fold(Self::zero(dof), |acc, a| {
            acc + (Self::x(dof, a) * Self::x(dof, a) + Self::p(dof, a) * Self::p(dof, a)).scale(0.5)
        })
    }

    /// `p^2/2 + v0 (x^2/b^2 - 1)^2` in one degree of freedom.
    pub fn double_well(v0: f64, b: f64) -> Self {
        let q = Self::x(1, 0) * Self::x(1, 0);
        let inner = q.scale(1.0 / (b * b)) - Self::constant(1, 1.0);
        (Self::p(1, 0) * Self::p(1, 0)).scale(0.5) + (inner.clone() * inner).scale(v0)
    }

    fn with_term(mut self, coef: f64, exps: Vec<u32>) -> Self {
        if coef != 0.0 {
            *self.terms.entry(exps).or_insert(0.0) += coef;
        }
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.dof);
        for (e, c) in &self.terms {
            out = out.with_term(c * s, e.clone());
        }
        out
    }

    /// Partial derivative along variable `var` (`0..n` positions, `n..2n` momenta).
    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.dof);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut d = e.clone();
                d[var] -= 1;
                out = out.with_term(c * e[var] as f64, d);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut v = *c;
                for a in 0..self.dof {
                    v *= x[a].powi(e[a] as i32) * p[a].powi(e[self.dof + a] as i32);
                }
                v
            })
            .sum()
    }

    /// No monomial mixes positions with momenta.
    pub fn is_separable(&self) -> bool {
        self.terms.keys().all(|e| {
            let has_x = e[..self.dof].iter().any(|&k| k > 0);
            let has_p = e[self.dof..].iter().any(|&k| k > 0);
            !(has_x && has_p)
        })
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Polynomial) -> Polynomial {
        let mut out = self;
        for (e, c) in rhs.terms {
            out = out.with_term(c, e);
        }
        out
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        self + rhs.scale(-1.0)
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.dof);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out = out.with_term(ca * cb, e);
            }
        }
        out
    }
}

/// A real function on phase space, either sampled or in closed polynomial form.
#[derive(Debug, Clone)]
pub enum ClassicalObservable {
    Grid { grid: PhaseGrid, values: Array2<f64> },
    Polynomial { grid: PhaseGrid, poly: Polynomial },
}

impl ClassicalObservable {
    pub fn sampled(grid: &PhaseGrid, values: Array2<f64>) -> Result<Self> {
        let d = grid.dim();
        if values.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.nrows(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observable has non-finite values".into()));
        }
        Ok(Self::Grid {
            grid: *grid,
            values,
        })
    }

    pub fn from_fn<F: Fn(&[f64], &[f64]) -> f64>(grid: &PhaseGrid, f: F) -> Result<Self> {
        Self::sampled(grid, grid.sample(f))
    }

    pub fn polynomial(grid: &PhaseGrid, poly: Polynomial) -> Result<Self> {
        if poly.dof() != grid.dof() {
            return Err(Error::DimensionMismatch {
                expected: grid.dof(),
                got: poly.dof(),
            });
        }
        Ok(Self::Polynomial { grid: *grid, poly })
    }

    pub fn grid(&self) -> &PhaseGrid {
        match self {
            Self::Grid { grid, .. } | Self::Polynomial { grid, .. } => grid,
        }
    }

    /// Values at the grid points.
    pub fn values(&self) -> Array2<f64> {
        match self {
            Self::Grid { values, .. } => values.clone(),
            Self::Polynomial { grid, poly } => grid.sample(|x, p| poly.eval(x, p)),
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match self {
            Self::Polynomial { poly, .. } => Some(poly),
            Self::Grid { .. } => None,
        }
    }

    pub fn eval(&self, z: &PhasePoint) -> f64 {
        match self {
            Self::Polynomial { poly, .. } => poly.eval(&z.x, &z.p),
            Self::Grid { grid, values } => spectral::interpolate(values, grid, &z.x, &z.p),
        }
    }
}

/// `{A, B} = sum_i (d_xi A d_pi B - d_xi B d_pi A)`.
///
/// Exact for two polynomials, spectral otherwise.
pub fn poisson_bracket(a: &ClassicalObservable, b: &ClassicalObservable) -> Result<ClassicalObservable> {
    a.grid().ensure_same(b.grid())?;
    let grid = *a.grid();
    let n = grid.dof();
    if let (Some(pa), Some(pb)) = (a.as_polynomial(), b.as_polynomial()) {
        let mut out = Polynomial::zero(n);
        for i in 0..n {
            out = out + pa.derivative(i) * pb.derivative(n + i) - pb.derivative(i) * pa.derivative(n + i);
        }
        return ClassicalObservable::polynomial(&grid, out);
    }
    let (va, vb) = (a.values(), b.values());
    let mut out = Array2::<f64>::zeros(va.dim());
    for i in 0..n {
        let dxa = spectral::derivative(&va, &grid, spectral::x_axis(i));
        let dpa = spectral::derivative(&va, &grid, spectral::p_axis(&grid, i));
        let dxb = spectral::derivative(&vb, &grid, spectral::x_axis(i));
        let dpb = spectral::derivative(&vb, &grid, spectral::p_axis(&grid, i));
        out = out + &dxa * &dpb - &dxb * &dpa;
    }
    ClassicalObservable::sampled(&grid, out)
}

/// Gradient evaluator `(dH/dx, dH/dp)`.
enum Gradient {
    Poly { dx: Vec<Polynomial>, dp: Vec<Polynomial>, separable: bool },
    Grid { grid: PhaseGrid, dx: Vec<Array2<f64>>, dp: Vec<Array2<f64>> },
}

impl Gradient {
    fn new(h: &ClassicalObservable) -> Self {
        let n = h.grid().dof();
        match h {
            ClassicalObservable::Polynomial { poly, .. } => Gradient::Poly {
                dx: (0..n).map(|i| poly.derivative(i)).collect(),
                dp: (0..n).map(|i| poly.derivative(n + i)).collect(),
                separable: poly.is_separable(),
            },
            ClassicalObservable::Grid { grid, values } => Gradient::Grid {
                grid: *grid,
                dx: (0..n).map(|i| spectral::derivative(values, grid, spectral::x_axis(i))).collect(),
                dp: (0..n).map(|i| spectral::derivative(values, grid, spectral::p_axis(grid, i))).collect(),
            },
        }
    }

    fn dx(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        match self {
            Gradient::Poly { dx, .. } => dx.iter().map(|d| d.eval(x, p)).collect(),
            Gradient::Grid { grid, dx, .. } => dx.iter().map(|d| spectral::interpolate(d, grid, x, p)).collect(),
        }
    }

    fn dp(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        match self {
            Gradient::Poly { dp, .. } => dp.iter().map(|d| d.eval(x, p)).collect(),
            Gradient::Grid { grid, dp, .. } => dp.iter().map(|d| spectral::interpolate(d, grid, x, p)).collect(),
        }
    }

    fn separable(&self) -> bool {
        matches!(self, Gradient::Poly { separable: true, .. })
    }

    /// One step of length `dt` (negative runs backwards).
    fn step(&self, x: &mut [f64], p: &mut [f64], dt: f64) {
        let n = x.len();
        if self.separable() {
            // kick-drift-kick leapfrog
            let f = self.dx(x, p);
            for i in 0..n {
                p[i] -= 0.5 * dt * f[i];
            }
            let v = self.dp(x, p);
            for i in 0..n {
                x[i] += dt * v[i];
            }
            let f = self.dx(x, p);
            for i in 0..n {
                p[i] -= 0.5 * dt * f[i];
            }
            return;
        }
        // implicit midpoint by fixed-point iteration
        let (x0, p0) = (x.to_vec(), p.to_vec());
        let (mut xn, mut pn) = (x0.clone(), p0.clone());
        for _ in 0..100 {
            let xm: Vec<f64> = (0..n).map(|i| 0.5 * (x0[i] + xn[i])).collect();
            let pm: Vec<f64> = (0..n).map(|i| 0.5 * (p0[i] + pn[i])).collect();
            let v = self.dp(&xm, &pm);
            let f = self.dx(&xm, &pm);
            let mut change: f64 = 0.0;
            for i in 0..n {
                let nx = x0[i] + dt * v[i];
                let np = p0[i] - dt * f[i];
                change = change.max((nx - xn[i]).abs()).max((np - pn[i]).abs());
                xn[i] = nx;
                pn[i] = np;
            }
            if change < 1e-15 {
                break;
            }
        }
        x.copy_from_slice(&xn);
        p.copy_from_slice(&pn);
    }
}

/// Result of integrating Hamilton's equations.
#[derive(Debug, Clone)]
pub struct Flow {
    /// Points at every step, starting with `z0`.
    pub points: Vec<PhasePoint>,
    /// The trajectory left the grid and was truncated there.
    pub escaped: bool,
}

impl Flow {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("a flow holds at least its initial point")
    }
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite t and dt > 0, got t = {t}, dt = {dt}")));
    }
    Ok((t.abs() / dt).ceil().max(if t == 0.0 { 0.0 } else { 1.0 }) as usize)
}

/// Integrate Hamilton's equations from `z0` for time `t` (negative runs backwards).
///
/// Leapfrog for separable polynomial `H`, implicit midpoint otherwise; the step
/// is shortened so the trajectory ends exactly at `t`.
pub fn hamilton_flow(h: &ClassicalObservable, z0: &PhasePoint, t: f64, dt: f64) -> Result<Flow> {
    let grid = h.grid();
    if z0.dof() != grid.dof() {
        return Err(Error::DimensionMismatch {
            expected: grid.dof(),
            got: z0.dof(),
        });
    }
    if !grid.contains(z0) {
        return Err(Error::InvalidArgument(format!("initial point {z0:?} lies outside the grid")));
    }
    let steps = steps_for(t, dt)?;
    let grad = Gradient::new(h);
    Ok(integrate(&grad, grid, z0, t, steps, true))
}

fn integrate(grad: &Gradient, grid: &PhaseGrid, z0: &PhasePoint, t: f64, steps: usize, record: bool) -> Flow {
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let (mut x, mut p) = (z0.x.clone(), z0.p.clone());
    let mut points = vec![z0.clone()];
    for _ in 0..steps {
        grad.step(&mut x, &mut p, h);
        let z = PhasePoint { x: x.clone(), p: p.clone() };
        if !grid.contains(&z) {
            return Flow { points, escaped: true };
        }
        if record {
            points.push(z);
        } else {
            points[0] = z;
        }
    }
    Flow { points, escaped: false }
}

/// Boolean mask over phase-space cells, indexed like grid arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    grid: PhaseGrid,
    cells: Array2<bool>,
}

impl CellMask {
    pub fn new(grid: &PhaseGrid, cells: Array2<bool>) -> Result<Self> {
        let d = grid.dim();
        if cells.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cells.nrows(),
            });
        }
        Ok(Self { grid: *grid, cells })
    }

    pub fn from_fn<F: Fn(&[f64], &[f64]) -> bool>(grid: &PhaseGrid, f: F) -> Self {
        let d = grid.dim();
        let xs: Vec<Vec<f64>> = (0..d).map(|i| grid.position(i)).collect();
        let ps: Vec<Vec<f64>> = (0..d).map(|i| grid.momentum(i)).collect();
        Self {
            grid: *grid,
            cells: Array2::from_shape_fn((d, d), |(i, k)| f(&xs[i], &ps[k])),
        }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn cells(&self) -> &Array2<bool> {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Membership of an arbitrary point through its nearest cell.
    pub fn contains(&self, z: &PhasePoint) -> bool {
        let g = &self.grid;
        let xi: Option<Vec<usize>> = z.x.iter().map(|&v| g.nearest_x(v)).collect();
        let pi: Option<Vec<usize>> = z.p.iter().map(|&v| g.nearest_p(v)).collect();
        match (xi, pi) {
            (Some(xi), Some(pi)) => self.cells[[g.ravel(&xi), g.ravel(&pi)]],
            _ => false,
        }
    }

    /// Cells present in exactly one of the two masks.
    pub fn symmetric_difference(&self, other: &CellMask) -> usize {
        self.cells.iter().zip(other.cells.iter()).filter(|(a, b)| a != b).count()
    }
}

/// Image of a cell mask under the Hamiltonian flow for time `t`.
///
/// A cell belongs to the image when its center flows back into the region;
/// every center of the region must also stay on the grid going forward.
pub fn evolve_region_classically(region: &CellMask, h: &ClassicalObservable, t: f64, dt: f64) -> Result<CellMask> {
    let grid = *region.grid();
    grid.ensure_same(h.grid())?;
    let steps = steps_for(t, dt)?;
    let grad = Gradient::new(h);
    let d = grid.dim();
    let escaped = (0..d * d).into_par_iter().find_any(|&c| {
        let (i, k) = (c / d, c % d);
        region.cells[[i, k]] && integrate(&grad, &grid, &grid.point(i, k), t, steps, false).escaped
    });
    if let Some(c) = escaped {
        return Err(Error::FlowEscaped(format!(
            "cell {:?} of the region leaves the grid within t = {t}",
            grid.point(c / d, c % d)
        )));
    }
    let cells: Vec<bool> = (0..d * d)
        .into_par_iter()
        .map(|c| {
            let back = integrate(&grad, &grid, &grid.point(c / d, c % d), -t, steps, false);
            !back.escaped && region.contains(back.last())
        })
        .collect();
    CellMask::new(&grid, Array2::from_shape_vec((d, d), cells).expect("d*d cells"))
}
