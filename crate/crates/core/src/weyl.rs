//! Exact discrete Weyl correspondence on the periodic grid.
//!
//! Operators are matrices in the position basis (`dim x dim`), symbols are
//! phase-space arrays indexed `[x multi-index, p multi-index]`. The map is
//! linear, sends the identity to the constant symbol 1, sends Hermitian
//! matrices to real symbols and satisfies
//! `Tr(A B) = N^{-n} sum S_A S_B`. For two degrees of freedom it is the tensor
//! product of the one-dimensional map.

use ndarray::Array2;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::spectral::{fft_in_place, ifft_in_place, signed_freq, C64};

const ALPHA: C64 = C64::new(0.5, 0.5);

fn half_shift(n: usize) -> Vec<C64> {
    (0..n)
        .map(|b| {
            if b == n / 2 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, -PI * signed_freq(b, n) as f64 / n as f64)
            }
        })
        .collect()
}

fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}

fn sign(i: usize) -> f64 {
    if i % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One-dimensional kernel to symbol.
pub fn kernel_to_symbol_1d(k: &Array2<C64>) -> Array2<C64> {
    let n = k.nrows();
    let ni = n as i64;
    let m = half_shift(n);
    // chords[ai][j], chord a = ai - N/2
    let mut chords = Array2::<C64>::zeros((n, n));
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for ai in 0..n {
        let a = ai as i64 - ni / 2;
        let f = |s: i64| k[[wrap(s + a, n), wrap(s, n)]];
        if ai == 0 {
            let q = ni / 4;
            for j in 0..ni {
                chords[[ai, j as usize]] = ALPHA * f(j + q) + ALPHA.conj() * f(j + ni / 2 + q);
            }
        } else if a % 2 == 0 {
            for j in 0..ni {
                chords[[ai, j as usize]] = f(j - a / 2);
            }
        } else {
            for (idx, b) in buf.iter_mut().enumerate() {
                *b = f(idx as i64 - (a - 1) / 2);
            }
            fft_in_place(&mut buf);
            buf.iter_mut().zip(&m).for_each(|(v, w)| *v *= w);
            ifft_in_place(&mut buf);
            for j in 0..n {
                chords[[ai, j]] = buf[j];
            }
        }
    }
    let mut s = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        for ai in 0..n {
            buf[ai] = chords[[ai, j]] * sign(ai);
        }
        fft_in_place(&mut buf);
        for kk in 0..n {
            s[[j, kk]] = buf[kk] * sign(kk);
        }
    }
    s
}

/// One-dimensional symbol to kernel.
pub fn symbol_to_kernel_1d(s: &Array2<C64>) -> Array2<C64> {
    let n = s.nrows();
    let ni = n as i64;
    let m = half_shift(n);
    let mut chords = Array2::<C64>::zeros((n, n));
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        for kk in 0..n {
            buf[kk] = s[[j, kk]] * sign(kk);
        }
        ifft_in_place(&mut buf);
        for ai in 0..n {
            chords[[ai, j]] = buf[ai] * sign(ai);
        }
    }
    let mut k = Array2::<C64>::zeros((n, n));
    for ai in 0..n {
        let a = ai as i64 - ni / 2;
        let g = |j: i64| chords[[ai, wrap(j, n)]];
        let mut put = |sidx: i64, v: C64| k[[wrap(sidx + a, n), wrap(sidx, n)]] = v;
        if ai == 0 {
            let q = ni / 4;
            for sidx in 0..ni {
                let mm = sidx - q;
                let v = (ALPHA * g(mm) - ALPHA.conj() * g(mm + ni / 2)) / C64::new(0.0, 1.0);
                put(sidx, v);
            }
        } else if a % 2 == 0 {
            for sidx in 0..ni {
                put(sidx, g(sidx + a / 2));
            }
        } else {
            for (idx, b) in buf.iter_mut().enumerate() {
                *b = g(idx as i64);
            }
            fft_in_place(&mut buf);
            buf.iter_mut().zip(&m).for_each(|(v, w)| *v /= w);
            ifft_in_place(&mut buf);
            for sidx in 0..ni {
                put(sidx, buf[wrap(sidx + (a - 1) / 2, n)]);
            }
        }
    }
    k
}

fn check_shape(a: &Array2<C64>, grid: &PhaseGrid) -> Result<()> {
    let d = grid.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if a.nrows() != d { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

/// Apply a one-dimensional map to the first axis pair of a two-dof array.
///
/// Input index `[(r1, r2), (s1, s2)]`, output `[(j1, r2), (k1, s2)]`; the
/// second axis pair is carried along untouched.
fn on_first_axis(a: &Array2<C64>, n: usize, map: fn(&Array2<C64>) -> Array2<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros(a.dim());
    let mut slice = Array2::<C64>::zeros((n, n));
    for r2 in 0..n {
        for s2 in 0..n {
            for r1 in 0..n {
                for s1 in 0..n {
                    slice[[r1, s1]] = a[[r1 * n + r2, s1 * n + s2]];
                }
            }
            let m = map(&slice);
            for r1 in 0..n {
                for s1 in 0..n {
                    out[[r1 * n + r2, s1 * n + s2]] = m[[r1, s1]];
                }
            }
        }
    }
    out
}

fn on_second_axis(a: &Array2<C64>, n: usize, map: fn(&Array2<C64>) -> Array2<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros(a.dim());
    let mut slice = Array2::<C64>::zeros((n, n));
    for r1 in 0..n {
        for s1 in 0..n {
            for r2 in 0..n {
                for s2 in 0..n {
                    slice[[r2, s2]] = a[[r1 * n + r2, s1 * n + s2]];
                }
            }
            let m = map(&slice);
            for r2 in 0..n {
                for s2 in 0..n {
                    out[[r1 * n + r2, s1 * n + s2]] = m[[r2, s2]];
                }
            }
        }
    }
    out
}

fn apply(a: &Array2<C64>, grid: &PhaseGrid, map: fn(&Array2<C64>) -> Array2<C64>) -> Result<Array2<C64>> {
    check_shape(a, grid)?;
    let n = grid.points();
    Ok(match grid.dof() {
        1 => map(a),
        _ => on_second_axis(&on_first_axis(a, n, map), n, map),
    })
}

/// Complex Weyl symbol of a position-basis operator matrix.
pub fn kernel_to_symbol(kernel: &Array2<C64>, grid: &PhaseGrid) -> Result<Array2<C64>> {
    apply(kernel, grid, kernel_to_symbol_1d)
}

/// Position-basis operator matrix of a complex symbol.
pub fn symbol_to_kernel(symbol: &Array2<C64>, grid: &PhaseGrid) -> Result<Array2<C64>> {
    apply(symbol, grid, symbol_to_kernel_1d)
}
