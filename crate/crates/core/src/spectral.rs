//! FFT plumbing shared by every grid transform.

use ndarray::{Array2, ArrayViewMut2, Axis, IxDyn};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use crate::grid::PhaseGrid;

pub type C64 = Complex64;

type PlanKey = (usize, bool);

fn registry() -> &'static RwLock<HashMap<PlanKey, Arc<dyn Fft<f64>>>> {
    static PLANS: OnceLock<RwLock<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    PLANS.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Cached FFT plan; `inverse` plans are unnormalized.
pub fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    if let Some(p) = registry().read().unwrap().get(&(len, inverse)) {
        return p.clone();
    }
    let mut planner = FftPlanner::new();
    let p = if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    };
    registry().write().unwrap().insert((len, inverse), p.clone());
    p
}

pub fn fft_in_place(buf: &mut [C64]) {
    plan(buf.len(), false).process(buf);
}

/// Normalized inverse transform.
pub fn ifft_in_place(buf: &mut [C64]) {
    plan(buf.len(), true).process(buf);
    let s = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= s);
}

/// Signed frequency index for FFT bin `b` (Nyquist maps to `-N/2`).
pub fn signed_freq(b: usize, n: usize) -> i64 {
    if b < n / 2 {
        b as i64
    } else {
        b as i64 - n as i64
    }
}

/// Logical axes of a phase-space array: `0..n` are positions, `n..2n` momenta.
pub fn x_axis(axis: usize) -> usize {
    axis
}

pub fn p_axis(grid: &PhaseGrid, axis: usize) -> usize {
    grid.dof() + axis
}

/// Apply `op` to every one-dimensional lane along a logical axis of a phase-space array.
pub fn map_lanes<F: FnMut(&mut [C64])>(
    values: &mut Array2<C64>,
    grid: &PhaseGrid,
    logical_axis: usize,
    mut op: F,
) {
    let n = grid.points();
    let shape = vec![n; 2 * grid.dof()];
    let view: ArrayViewMut2<C64> = values.view_mut();
    let mut nd = view
        .into_shape_with_order(IxDyn(&shape))
        .expect("phase-space arrays are contiguous");
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for mut lane in nd.lanes_mut(Axis(logical_axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        op(&mut buf);
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}

/// Spectral derivative of a real phase-space array along a logical axis.
pub fn derivative(values: &Array2<f64>, grid: &PhaseGrid, logical_axis: usize) -> Array2<f64> {
    let n = grid.points();
    let step = if logical_axis < grid.dof() {
        grid.dx()
    } else {
        grid.dp()
    };
    let length = step * n as f64;
    let factors: Vec<C64> = (0..n)
        .map(|b| {
            if b == n / 2 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.0, 2.0 * PI * signed_freq(b, n) as f64 / length)
            }
        })
        .collect();
    let mut work = values.mapv(|v| C64::new(v, 0.0));
    map_lanes(&mut work, grid, logical_axis, |buf| {
        fft_in_place(buf);
        for (v, f) in buf.iter_mut().zip(&factors) {
            *v *= f;
        }
        ifft_in_place(buf);
    });
    work.mapv(|v| v.re)
}

/// Band-limited (trigonometric) interpolation of a real phase-space array at an arbitrary point.
pub fn interpolate(values: &Array2<f64>, grid: &PhaseGrid, x: &[f64], p: &[f64]) -> f64 {
    let n = grid.points();
    // Weights of the periodic band-limited interpolant along one axis; the
    // Nyquist mode contributes through cos so real data stays real.
    let weights = |coord: f64, step: f64| -> Vec<C64> {
        let t = coord / step + (n / 2) as f64;
        let coef: Vec<C64> = (0..n)
            .map(|b| {
                let phase = 2.0 * PI * signed_freq(b, n) as f64 * t / n as f64;
                if b == n / 2 {
                    C64::new(phase.cos(), 0.0)
                } else {
                    C64::from_polar(1.0, phase)
                }
            })
            .collect();
        (0..n)
            .map(|j| {
                coef.iter()
                    .enumerate()
                    .map(|(b, c)| c * C64::from_polar(1.0, -2.0 * PI * (b * j) as f64 / n as f64))
                    .sum::<C64>()
                    / n as f64
            })
            .collect()
    };
    let dof = grid.dof();
    let axes: Vec<Vec<C64>> = x
        .iter()
        .map(|&c| weights(c, grid.dx()))
        .chain(p.iter().map(|&c| weights(c, grid.dp())))
        .collect();
    let mut acc = C64::new(0.0, 0.0);
    for ((i, k), v) in values.indexed_iter() {
        let xi = grid.unravel(i);
        let pk = grid.unravel(k);
        let mut w = C64::new(1.0, 0.0);
        for a in 0..dof {
            w *= axes[a][xi[a]] * axes[dof + a][pk[a]];
        }
        acc += w * v;
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_periodic_mode_is_exact() {
        let g = PhaseGrid::symmetric(1, 32, 1.0).unwrap();
        let lx = g.dx() * 32.0;
        let kx = 2.0 * PI * 3.0 / lx;
        let lp = g.dp() * 32.0;
        let kp = 2.0 * PI * 2.0 / lp;
        let f = g.sample(|x, p| (kx * x[0]).sin() * (kp * p[0]).cos());
        let dfx = derivative(&f, &g, 0);
        let dfp = derivative(&f, &g, 1);
        let ex = g.sample(|x, p| kx * (kx * x[0]).cos() * (kp * p[0]).cos());
        let ep = g.sample(|x, p| -kp * (kx * x[0]).sin() * (kp * p[0]).sin());
        assert!((&dfx - &ex).iter().all(|v| v.abs() < 1e-10));
        assert!((&dfp - &ep).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn interpolation_reproduces_samples_and_gaussians() {
        let g = PhaseGrid::symmetric(1, 64, 1.0).unwrap();
        let f = g.sample(|x, p| (-(x[0] * x[0] + p[0] * p[0])).exp());
        let v = interpolate(&f, &g, &[g.x_at(17)], &[g.p_at(15)]);
        assert!((v - f[[17, 15]]).abs() < 1e-12);
        let v = interpolate(&f, &g, &[0.3], &[-0.2]);
        assert!((v - (-(0.09f64 + 0.04)).exp()).abs() < 1e-8);
    }

    #[test]
    fn plans_are_cached() {
        let a = plan(48, false);
        let b = plan(48, false);
        assert!(Arc::ptr_eq(&a, &b));
    }
}
