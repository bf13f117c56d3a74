//! Moyal star product, Moyal bracket and Liouville-von Neumann evolution.
//!
//! The exact product works in chord space: each symbol is mapped to its
//! operator kernel, the kernels are multiplied and the result is mapped back.
//! On the periodic grid this is the discrete form of the twisted convolution
//! with phase `exp(-(i/2 hbar) sigma(z', z''))`. The derivative series is kept
//! as a cross-check and uses non-periodic finite-difference stencils so that
//! polynomial symbols differentiate exactly.

use ndarray::Array2;
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::linalg::adjoint;
use crate::spectral::{signed_freq, C64};
use crate::weyl::{kernel_to_symbol, symbol_to_kernel};
use crate::wigner::{WeylSymbol, WignerState};

const MAX_ORDER: u32 = 3;
const STENCIL: usize = 11;

/// Reusable product plan for one grid.
#[derive(Debug, Clone)]
pub struct StarProductPlan {
    grid: PhaseGrid,
    order: u32,
    chord_phases: Vec<C64>,
}

impl StarProductPlan {
    pub fn new(grid: &PhaseGrid, order: u32) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        let n = grid.points();
        let chord_phases = (0..n)
            .map(|b| {
                if b == n / 2 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::from_polar(1.0, -PI * signed_freq(b, n) as f64 / n as f64)
                }
            })
            .collect();
        Ok(Self {
            grid: *grid,
            order,
            chord_phases,
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Half-cell chord shift factors, all of unit modulus.
    pub fn chord_phases(&self) -> &[C64] {
        &self.chord_phases
    }

    fn check(&self, a: &WeylSymbol, b: &WeylSymbol) -> Result<()> {
        self.grid.ensure_same(a.grid())?;
        self.grid.ensure_same(b.grid())
    }

    pub fn product(&self, a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
        self.check(a, b)?;
        let ka = symbol_to_kernel(a.values(), &self.grid)?;
        let kb = symbol_to_kernel(b.values(), &self.grid)?;
        WeylSymbol::new(&self.grid, kernel_to_symbol(&ka.dot(&kb), &self.grid)?)
    }

    /// `(1 / i hbar)(A * B - B * A)`.
    pub fn bracket(&self, a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
        self.check(a, b)?;
        let ka = symbol_to_kernel(a.values(), &self.grid)?;
        let kb = symbol_to_kernel(b.values(), &self.grid)?;
        let m = ka.dot(&kb);
        let comm = &m - &kb.dot(&ka);
        let mut s = kernel_to_symbol(&comm, &self.grid)?.mapv(|v| v / C64::new(0.0, self.grid.hbar()));
        if a.is_hermitian() && b.is_hermitian() {
            s.mapv_inplace(|v| C64::new(v.re, 0.0));
        }
        WeylSymbol::new(&self.grid, s)
    }

    /// Derivative series `sum_k (i hbar / 2)^k / k! sigma(<-d, ->d)^k` up to the plan order.
    pub fn truncated(&self, a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
        self.check(a, b)?;
        let n = self.grid.dof();
        let mut da = Derivatives::new(&self.grid, a.values());
        let mut db = Derivatives::new(&self.grid, b.values());
        let mut out = Array2::<C64>::zeros(a.values().dim());
        for k in 0..=self.order {
            let pref = C64::new(0.0, self.grid.hbar() / 2.0).powu(k);
            for m in compositions(k as usize, 2 * n) {
                // m[i]: powers of dx_i(A) dp_i(B); m[n+i]: powers of -dp_i(A) dx_i(B)
                let mut ea = vec![0u32; 2 * n];
                let mut eb = vec![0u32; 2 * n];
                let mut coef = 1.0;
                for i in 0..n {
                    ea[i] += m[i] as u32;
                    eb[n + i] += m[i] as u32;
                    ea[n + i] += m[n + i] as u32;
                    eb[i] += m[n + i] as u32;
                    coef /= factorial(m[i]) * factorial(m[n + i]);
                    if m[n + i] % 2 == 1 {
                        coef = -coef;
                    }
                }
                let term = da.get(&ea) * db.get(&eb);
                out = out + term.mapv(|v| v * pref * coef);
            }
        }
        WeylSymbol::new(&self.grid, out)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// All vectors of `parts` non-negative integers summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Fornberg weights for the `m`-th derivative at `x0` from samples at `nodes`.
fn fornberg(nodes: &[f64], x0: f64, m: usize) -> Vec<f64> {
    let len = nodes.len();
    let mut c = vec![vec![0.0; m + 1]; len];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..len {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Non-periodic finite-difference derivative of order `m` along a logical axis.
fn fd_derivative(values: &Array2<C64>, grid: &PhaseGrid, axis: usize, m: usize) -> Array2<C64> {
    let n = grid.points();
    let step = if axis < grid.dof() { grid.dx() } else { grid.dp() };
    let half = STENCIL / 2;
    let weights: Vec<(usize, Vec<f64>)> = (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - STENCIL);
            let nodes: Vec<f64> = (start..start + STENCIL).map(|j| j as f64).collect();
            let w = fornberg(&nodes, i as f64, m)
                .into_iter()
                .map(|v| v / step.powi(m as i32))
                .collect();
            (start, w)
        })
        .collect();
    let mut out = values.clone();
    crate::spectral::map_lanes(&mut out, grid, axis, |lane| {
        let src = lane.to_vec();
        for (i, (start, w)) in weights.iter().enumerate() {
            lane[i] = w.iter().enumerate().map(|(j, wj)| src[start + j] * wj).sum();
        }
    });
    out
}

/// Memoized mixed partial derivatives of one symbol.
struct Derivatives<'a> {
    grid: &'a PhaseGrid,
    cache: HashMap<Vec<u32>, Array2<C64>>,
}

impl<'a> Derivatives<'a> {
    fn new(grid: &'a PhaseGrid, values: &Array2<C64>) -> Self {
        let mut cache = HashMap::new();
        cache.insert(vec![0; 2 * grid.dof()], values.clone());
        Self { grid, cache }
    }

    fn get(&mut self, exps: &[u32]) -> Array2<C64> {
        if let Some(v) = self.cache.get(exps) {
            return v.clone();
        }
        let zero = vec![0; exps.len()];
        let mut current = self.cache[&zero].clone();
        let mut key = zero;
        for (axis, &e) in exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            key[axis] = e;
            current = match self.cache.get(&key) {
                Some(v) => v.clone(),
                None => {
                    let d = fd_derivative(&current, self.grid, axis, e as usize);
                    self.cache.insert(key.clone(), d.clone());
                    d
                }
            };
        }
        current
    }
}

pub fn moyal_product(a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
    StarProductPlan::new(a.grid(), 0)?.product(a, b)
}

pub fn moyal_product_truncated(a: &WeylSymbol, b: &WeylSymbol, order: u32) -> Result<WeylSymbol> {
    StarProductPlan::new(a.grid(), order)?.truncated(a, b)
}

/// `(A * B + B * A) / 2`, the Weyl-ordered product.
///
/// Use this for mixed terms such as `x p`: sampling them directly puts a jump
/// across the periodic seam into the position dependence, which the half-cell
/// chord interpolation turns into ringing.
pub fn symmetrized_product(a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
    let plan = StarProductPlan::new(a.grid(), 0)?;
    let ab = plan.product(a, b)?;
    let ba = plan.product(b, a)?;
    let mut v = (ab.values() + ba.values()).mapv(|c| c * 0.5);
    if a.is_hermitian() && b.is_hermitian() {
        v.mapv_inplace(|c| C64::new(c.re, 0.0));
    }
    WeylSymbol::new(a.grid(), v)
}

pub fn moyal_bracket(a: &WeylSymbol, b: &WeylSymbol) -> Result<WeylSymbol> {
    StarProductPlan::new(a.grid(), 0)?.bracket(a, b)
}

/// Real Hamiltonian symbol, optionally with linearly interpolated keyframes.
#[derive(Debug, Clone)]
pub struct HamiltonianSymbol {
    grid: PhaseGrid,
    times: Vec<f64>,
    symbols: Vec<WeylSymbol>,
    kernels: Vec<Array2<C64>>,
}

impl HamiltonianSymbol {
    pub fn new(symbol: WeylSymbol) -> Result<Self> {
        Self::keyframes(vec![(0.0, symbol)])
    }

    /// Keyframes `(time, symbol)`; held constant outside the covered interval.
    pub fn keyframes(mut frames: Vec<(f64, WeylSymbol)>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("Hamiltonian needs at least one keyframe".into()));
        }
        frames.sort_by(|a, b| a.0.total_cmp(&b.0));
        let grid = *frames[0].1.grid();
        let mut kernels = Vec::with_capacity(frames.len());
        for (t, s) in &frames {
            grid.ensure_same(s.grid())?;
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("keyframe time {t} is not finite")));
            }
            let v = s.real_values()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("Hamiltonian symbol has non-finite values".into()));
            }
            kernels.push(crate::wigner::weyl_operator_from_symbol(s)?);
        }
        let (times, symbols) = frames.into_iter().unzip();
        Ok(Self {
            grid,
            times,
            symbols,
            kernels,
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn is_static(&self) -> bool {
        self.times.len() == 1
    }

    fn weights(&self, t: f64) -> (usize, usize, f64) {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[last] {
            return (last, last, 0.0);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (i, i + 1, w)
    }

    pub fn symbol_at(&self, t: f64) -> WeylSymbol {
        let (i, j, w) = self.weights(t);
        if w == 0.0 {
            return self.symbols[i].clone();
        }
        let v = self.symbols[i].values().mapv(|c| c * (1.0 - w)) + self.symbols[j].values().mapv(|c| c * w);
        WeylSymbol::new(&self.grid, v).expect("keyframes share a grid")
    }

    /// Operator matrix at time `t`.
    pub fn kernel_at(&self, t: f64) -> Array2<C64> {
        let (i, j, w) = self.weights(t);
        if w == 0.0 {
            return self.kernels[i].clone();
        }
        self.kernels[i].mapv(|c| c * (1.0 - w)) + self.kernels[j].mapv(|c| c * w)
    }

    /// Upper bound on the operator norm over all keyframes (max absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        self.kernels
            .iter()
            .map(|k| k.rows().into_iter().map(|r| r.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Largest stable RK4 step for the commutator flow.
    pub fn stable_dt(&self) -> f64 {
        2.8 * self.grid.hbar() / (2.0 * self.norm_bound()).max(f64::MIN_POSITIVE)
    }
}

fn lvn_rhs(h: &Array2<C64>, rho: &Array2<C64>, hbar: f64) -> Array2<C64> {
    // rho stays Hermitian, so rho H = (H rho)^H
    let m = h.dot(rho);
    let c = &m - &adjoint(&m);
    c.mapv(|v| v * C64::new(0.0, -1.0 / hbar))
}

/// Evolve a density kernel under `d rho / dt = -(i/hbar)[H, rho]` with fixed-step RK4.
pub fn evolve_kernel(rho: &Array2<C64>, h: &HamiltonianSymbol, t0: f64, duration: f64, dt: f64) -> Result<Array2<C64>> {
    if !(dt > 0.0) || !dt.is_finite() || !duration.is_finite() || duration < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and a non-negative duration, got dt = {dt}, t = {duration}"
        )));
    }
    let steps = (duration / dt).ceil() as usize;
    if steps == 0 {
        return Ok(rho.clone());
    }
    let step = duration / steps as f64;
    let hbar = h.grid().hbar();
    let norm0 = frobenius(rho);
    let mut r = rho.clone();
    for s in 0..steps {
        let t = t0 + s as f64 * step;
        let (h0, hm, h1) = (h.kernel_at(t), h.kernel_at(t + 0.5 * step), h.kernel_at(t + step));
        let k1 = lvn_rhs(&h0, &r, hbar);
        let k2 = lvn_rhs(&hm, &(&r + &k1.mapv(|v| v * (0.5 * step))), hbar);
        let k3 = lvn_rhs(&hm, &(&r + &k2.mapv(|v| v * (0.5 * step))), hbar);
        let k4 = lvn_rhs(&h1, &(&r + &k3.mapv(|v| v * step)), hbar);
        r = r + (k1 + k2.mapv(|v| v * 2.0) + k3.mapv(|v| v * 2.0) + k4).mapv(|v| v * (step / 6.0));
        let growth = (frobenius(&r) - norm0).abs() / norm0.max(f64::MIN_POSITIVE);
        if growth > 1e-4 || !growth.is_finite() {
            return Err(Error::Unstable {
                growth,
                time: t + step,
                suggested_dt: h.stable_dt().min(step / 2.0),
            });
        }
    }
    Ok(r)
}

fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `dW/dt = -{{W, H}}` integrated for `t_final` with step at most `dt`.
pub fn evolve_lvn(w: &WignerState, h: &HamiltonianSymbol, t_final: f64, dt: f64) -> Result<WignerState> {
    w.grid().ensure_same(h.grid())?;
    let rho = crate::wigner::density_from_wigner(w)?;
    let out = evolve_kernel(rho.matrix(), h, 0.0, t_final, dt)?;
    let rho = crate::wigner::DensityOperator::unchecked(w.grid(), out)?;
    crate::wigner::wigner_from_density(&rho)
}

/// Max-norm difference between runs at `dt` and `dt / 2`.
pub fn richardson_check(w: &WignerState, h: &HamiltonianSymbol, t_final: f64, dt: f64) -> Result<f64> {
    let a = evolve_lvn(w, h, t_final, dt)?;
    let b = evolve_lvn(w, h, t_final, dt / 2.0)?;
    Ok((a.values() - b.values()).iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// `(2 pi hbar)^n integral W^2 dz`.
pub fn purity(w: &WignerState) -> f64 {
    let g = w.grid();
    w.values().iter().map(|v| v * v).sum::<f64>() * g.cell_volume() * (2.0 * PI * g.hbar()).powi(g.dof() as i32)
}

/// `Tr(A rho)` for a symbol against a state; complex symbols allowed.
pub fn expectation(a: &WeylSymbol, w: &WignerState) -> Result<C64> {
    a.grid().ensure_same(w.grid())?;
    let s: C64 = a.values().iter().zip(w.values().iter()).map(|(x, y)| x * y).sum();
    Ok(s * w.grid().cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::classical::{hamilton_flow, ClassicalObservable, Polynomial};
    use crate::grid::PhasePoint;
    use crate::linalg::Eigh;
    use crate::wigner::{coherent_state, mean_value, weyl_operator_from_symbol, wigner_from_wavefunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(1, 64, 6.0, 0.5).unwrap()
    }

    fn gaussian_symbol(g: &PhaseGrid, rng: &mut ChaCha8Rng) -> WeylSymbol {
        let (x0, p0, s, c) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.6..1.2),
            rng.random_range(-1.0..1.0),
        );
        WeylSymbol::from_fn(g, |x, p| {
            (-((x[0] - x0).powi(2) + (p[0] - p0).powi(2)) / (s * s)).exp() * (1.0 + c * x[0] * p[0])
        })
    }

    fn linf(a: &WeylSymbol, b: &WeylSymbol) -> f64 {
        linalg::max_abs(&(a.values() - b.values()))
    }

    #[test]
    fn product_is_operator_product_and_associative() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = StarProductPlan::new(&g, 0).unwrap();
        assert!(plan.chord_phases().iter().all(|v| (v.norm() - 1.0).abs() < 1e-15));
        for _ in 0..3 {
            let (a, b, c) = (gaussian_symbol(&g, &mut rng), gaussian_symbol(&g, &mut rng), gaussian_symbol(&g, &mut rng));
            let ab = plan.product(&a, &b).unwrap();
            let ka = weyl_operator_from_symbol(&a).unwrap();
            let kb = weyl_operator_from_symbol(&b).unwrap();
            let kab = weyl_operator_from_symbol(&ab).unwrap();
            assert!(linalg::max_abs(&(&kab - &ka.dot(&kb))) < 1e-6);
            let left = plan.product(&ab, &c).unwrap();
            let right = plan.product(&a, &plan.product(&b, &c).unwrap()).unwrap();
            assert!(linf(&left, &right) < 1e-6);
            let one = WeylSymbol::constant(&g, 1.0);
            assert!(linf(&plan.product(&one, &b).unwrap(), &b) < 1e-10);
        }
    }

    #[test]
    fn canonical_commutator_in_expectation() {
        let g = PhaseGrid::new(1, 128, 10.0, 0.5).unwrap();
        let w = wigner_from_wavefunction(&coherent_state(&[0.5], &[0.5], &g).unwrap()).unwrap();
        let (x, p) = (WeylSymbol::position(&g, 0), WeylSymbol::momentum(&g, 0));
        let xp = moyal_product(&x, &p).unwrap();
        let px = moyal_product(&p, &x).unwrap();
        let c = WeylSymbol::new(&g, xp.values() - px.values()).unwrap();
        assert!((expectation(&c, &w).unwrap() - C64::new(0.0, 0.5)).norm() < 1e-10);
        let br = moyal_bracket(&x, &p).unwrap();
        assert!((mean_value(&br, &w).unwrap() - 1.0).abs() < 1e-10);
        let t1 = moyal_product_truncated(&x, &p, 1).unwrap();
        assert!((expectation(&t1, &w).unwrap() - expectation(&xp, &w).unwrap()).norm() < 1e-9);
        let x2 = WeylSymbol::from_fn(&g, |x, _| x[0] * x[0]);
        let p2 = WeylSymbol::from_fn(&g, |_, p| p[0] * p[0]);
        let full = expectation(&moyal_product(&x2, &p2).unwrap(), &w).unwrap();
        let t2 = expectation(&moyal_product_truncated(&x2, &p2, 2).unwrap(), &w).unwrap();
        assert!((full - t2).norm() < 1e-8);
    }

    #[test]
    fn truncation_orders() {
        let g = grid();
        let x = WeylSymbol::position(&g, 0);
        let p = WeylSymbol::momentum(&g, 0);
        let t0 = moyal_product_truncated(&x, &p, 0).unwrap();
        let t1 = moyal_product_truncated(&x, &p, 1).unwrap();
        let xp = WeylSymbol::from_fn(&g, |x, p| x[0] * p[0]);
        assert!(linf(&t0, &xp) < 1e-9);
        let shifted = WeylSymbol::new(&g, xp.values().mapv(|v| v + C64::new(0.0, 0.25))).unwrap();
        assert!(linf(&t1, &shifted) < 1e-9);
        assert!(matches!(moyal_product_truncated(&x, &p, 4), Err(Error::UnsupportedOrder(4))));
    }

    #[test]
    fn truncation_residual_scales_with_hbar() {
        // Fixed-width Gaussian symbols, hbar halved with the grid refined to match.
        let mut rows = Vec::new();
        for &(h, n) in &[(0.5, 64usize), (0.25, 128)] {
            let g = PhaseGrid::new(1, n, 8.0, h).unwrap();
            let a = WeylSymbol::from_fn(&g, |x, p| (-(x[0] - 0.3).powi(2) - p[0] * p[0]).exp());
            let b = WeylSymbol::from_fn(&g, |x, p| (-(x[0] * x[0]) - 0.5 * (p[0] - 0.2).powi(2)).exp());
            let full = moyal_product(&a, &b).unwrap();
            let res: Vec<f64> = (0..=3)
                .map(|o| linf(&moyal_product_truncated(&a, &b, o).unwrap(), &full))
                .collect();
            rows.push(res);
        }
        for o in 0..=3 {
            let slope = (rows[0][o] / rows[1][o]).log2();
            assert!((slope - (o as f64 + 1.0)).abs() < 0.35, "order {o}: slope {slope}");
        }
    }

    #[test]
    fn bracket_properties() {
        let g = PhaseGrid::new(1, 128, 10.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian_symbol(&g, &mut rng);
        let b = gaussian_symbol(&g, &mut rng);
        let ab = moyal_bracket(&a, &b).unwrap();
        let ba = moyal_bracket(&b, &a).unwrap();
        assert!(ab.is_hermitian());
        assert!(linalg::max_abs(&(ab.values() + ba.values())) < 1e-10);
        assert!(moyal_bracket(&a, &a).unwrap().values().iter().all(|v| v.norm() < 1e-10));
        // x^3 with p^3: the Moyal correction is -(3/2) hbar^2 exactly
        let mut gaps = Vec::new();
        for &h in &[1.0, 0.5, 0.25] {
            let g = PhaseGrid::new(1, 128, 10.0, h).unwrap();
            let w = wigner_from_wavefunction(&coherent_state(&[0.5], &[0.5], &g).unwrap()).unwrap();
            let x3 = WeylSymbol::from_fn(&g, |x, _| x[0].powi(3));
            let p3 = WeylSymbol::from_fn(&g, |_, p| p[0].powi(3));
            let pb = WeylSymbol::from_fn(&g, |x, p| 9.0 * x[0] * x[0] * p[0] * p[0]);
            let mb = moyal_bracket(&x3, &p3).unwrap();
            gaps.push(mean_value(&mb, &w).unwrap() - mean_value(&pb, &w).unwrap());
        }
        for (g, h) in gaps.iter().zip([1.0, 0.5, 0.25]) {
            assert!((g + 1.5 * h * h).abs() < 1e-6, "gap {g}");
        }
        let slope = (gaps[0] / gaps[2]).log2() / 2.0;
        assert!((slope - 2.0).abs() < 1e-6);
    }

    #[test]
    fn oscillator_rotation_returns() {
        let g = grid();
        let h = HamiltonianSymbol::new(WeylSymbol::oscillator(&g)).unwrap();
        let w = wigner_from_wavefunction(&coherent_state(&[1.0], &[0.0], &g).unwrap()).unwrap();
        let same = evolve_lvn(&w, &h, 0.0, 0.01).unwrap();
        assert!((same.values() - w.values()).iter().all(|v| v.abs() < 1e-14));
        let back = evolve_lvn(&w, &h, 2.0 * PI, 0.005).unwrap();
        let err = (back.values() - w.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-5, "err {err}");
        assert!((back.integral() - 1.0).abs() < 1e-8 * 2.0 * PI);
        assert!((purity(&back) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn free_propagation_matches_exact_unitary() {
        // The spreading packet needs chords up to x_extent to stay negligible.
        let g = PhaseGrid::new(1, 128, 10.0, 0.5).unwrap();
        let hs = WeylSymbol::from_fn(&g, |_, p| 0.5 * p[0] * p[0]);
        let h = HamiltonianSymbol::new(hs.clone()).unwrap();
        let psi = coherent_state(&[-1.0], &[0.5], &g).unwrap();
        let w = wigner_from_wavefunction(&psi).unwrap();
        let lvn = evolve_lvn(&w, &h, 1.0, 0.005).unwrap();
        let e = Eigh::new(&weyl_operator_from_symbol(&hs).unwrap()).unwrap();
        let u = e.apply_fn(|l| C64::from_polar(1.0, -l / g.hbar()));
        let v = u.dot(&psi.unit_vector());
        let exact = wigner_from_wavefunction(&crate::wigner::WaveFunction::from_unit_vector(&g, v).unwrap()).unwrap();
        let err = (lvn.values() - exact.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn linearity_and_ehrenfest() {
        let g = PhaseGrid::new(1, 128, 10.0, 0.5).unwrap();
        let xp = symmetrized_product(&WeylSymbol::position(&g, 0), &WeylSymbol::momentum(&g, 0)).unwrap();
        let quad = WeylSymbol::from_fn(&g, |x, p| 0.5 * p[0] * p[0] + 0.3 * x[0] * x[0]);
        let hs = WeylSymbol::new(&g, quad.values() + &xp.values().mapv(|v| v * 0.1)).unwrap();
        let h = HamiltonianSymbol::new(hs).unwrap();
        let w1 = wigner_from_wavefunction(&coherent_state(&[0.8], &[0.0], &g).unwrap()).unwrap();
        let w2 = wigner_from_wavefunction(&coherent_state(&[-0.5], &[0.7], &g).unwrap()).unwrap();
        let mix = w1.mix(&w2, 0.3).unwrap();
        let (t, dt) = (1.5, 0.005);
        let e1 = evolve_lvn(&w1, &h, t, dt).unwrap();
        let e2 = evolve_lvn(&w2, &h, t, dt).unwrap();
        let em = evolve_lvn(&mix, &h, t, dt).unwrap();
        let comb = e1.mix(&e2, 0.3).unwrap();
        assert!((em.values() - comb.values()).iter().all(|v| v.abs() < 1e-8));
        let poly = (Polynomial::p(1, 0) * Polynomial::p(1, 0)).scale(0.5)
            + (Polynomial::x(1, 0) * Polynomial::x(1, 0)).scale(0.3)
            + (Polynomial::x(1, 0) * Polynomial::p(1, 0)).scale(0.1);
        let ch = ClassicalObservable::polynomial(&g, poly).unwrap();
        let flow = hamilton_flow(&ch, &PhasePoint::new1(0.8, 0.0), t, 1e-4).unwrap();
        let z = flow.last();
        let ex = mean_value(&WeylSymbol::position(&g, 0), &e1).unwrap() - z.x[0];
        let ep = mean_value(&WeylSymbol::momentum(&g, 0), &e1).unwrap() - z.p[0];
        assert!(ex.abs() < 1e-6 && ep.abs() < 1e-6, "{ex} {ep}");
    }

    #[test]
    fn instability_is_reported() {
        let g = grid();
        let h = HamiltonianSymbol::new(WeylSymbol::oscillator(&g)).unwrap();
        let w = wigner_from_wavefunction(&coherent_state(&[1.0], &[0.0], &g).unwrap()).unwrap();
        match evolve_lvn(&w, &h, 5.0, 0.5) {
            Err(Error::Unstable { suggested_dt, .. }) => assert!(suggested_dt < 0.5),
            other => panic!("expected instability, got {other:?}"),
        }
    }
}
