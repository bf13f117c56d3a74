//! Dense Hilbert-space reference: propagation, square roots, POVMs and
//! premeasurement couplings.

use log::warn;
use ndarray::{Array1, Array2};
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::linalg::{self, Eigh};
use crate::moyal::HamiltonianSymbol;
use crate::spectral::C64;
use crate::wigner::{DensityOperator, WaveFunction};

/// Dense square matrix with verified flags and a lazily cached spectrum.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    matrix: Array2<C64>,
    hermitian: bool,
    psd: bool,
    eigen: Arc<OnceLock<Eigh>>,
}

impl OperatorMatrix {
    /// Any square matrix; the Hermitian flag is detected at 1e-10.
    pub fn new(matrix: Array2<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let hermitian = linalg::hermiticity_defect(&matrix) <= 1e-10;
        Ok(Self {
            matrix,
            hermitian,
            psd: false,
            eigen: Arc::new(OnceLock::new()),
        })
    }

    pub fn hermitian(matrix: Array2<C64>) -> Result<Self> {
        let op = Self::new(matrix)?;
        if !op.hermitian {
            return Err(Error::NonHermitian {
                deviation: linalg::hermiticity_defect(&op.matrix),
            });
        }
        Ok(op)
    }

    /// Hermitian with spectrum above -1e-8.
    pub fn psd(matrix: Array2<C64>) -> Result<Self> {
        let mut op = Self::hermitian(matrix)?;
        let min_eigenvalue = op.eigen()?.min();
        if min_eigenvalue < -1e-8 {
            return Err(Error::NotPositive { min_eigenvalue });
        }
        op.psd = true;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::new(linalg::identity(dim)).expect("square");
        op.psd = true;
        op
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_psd(&self) -> bool {
        self.psd
    }

    /// Cached eigendecomposition (Hermitian operators only).
    pub fn eigen(&self) -> Result<&Eigh> {
        if !self.hermitian {
            return Err(Error::NonHermitian {
                deviation: linalg::hermiticity_defect(&self.matrix),
            });
        }
        if let Some(e) = self.eigen.get() {
            return Ok(e);
        }
        let e = Eigh::new(&self.matrix)?;
        Ok(self.eigen.get_or_init(|| e))
    }

    /// `exp(-i H t / hbar)`.
    pub fn propagator(&self, t: f64, hbar: f64) -> Result<Array2<C64>> {
        Ok(self.eigen()?.apply_fn(|l| C64::from_polar(1.0, -l * t / hbar)))
    }

    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        self.matrix.dot(v)
    }
}

pub fn schrodinger_propagate(psi: &WaveFunction, h: &OperatorMatrix, t: f64) -> Result<WaveFunction> {
    if h.dim() != psi.grid().dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.grid().dim(),
            got: h.dim(),
        });
    }
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let u = h.propagator(t, psi.grid().hbar())?;
    WaveFunction::from_unit_vector(psi.grid(), u.dot(&psi.unit_vector()))
}

/// Time-dependent propagation by midpoint exponentials over steps of at most `dt`.
pub fn schrodinger_propagate_keyframed(psi: &WaveFunction, h: &HamiltonianSymbol, t0: f64, t: f64, dt: f64) -> Result<WaveFunction> {
    psi.grid().ensure_same(h.grid())?;
    if h.is_static() {
        return schrodinger_propagate(psi, &OperatorMatrix::hermitian(h.kernel_at(t0))?, t);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let step = t / steps as f64;
    let mut v = psi.unit_vector();
    for s in 0..steps {
        let mid = t0 + (s as f64 + 0.5) * step;
        let op = OperatorMatrix::hermitian(h.kernel_at(mid))?;
        v = op.propagator(step, psi.grid().hbar())?.dot(&v);
    }
    WaveFunction::from_unit_vector(psi.grid(), v)
}

/// Hermitian PSD square root with small negative eigenvalues clipped.
pub fn operator_sqrt(p: &OperatorMatrix) -> Result<OperatorMatrix> {
    let e = p.eigen()?;
    if e.min() < -1e-6 {
        return Err(Error::NotPositive { min_eigenvalue: e.min() });
    }
    if e.min() < 0.0 {
        warn!("operator_sqrt clipped eigenvalues down to {:.3e}", e.min());
    }
    let mut out = OperatorMatrix::new(e.apply_fn(|l| C64::new(l.max(0.0).sqrt(), 0.0)))?;
    out.hermitian = true;
    out.psd = true;
    Ok(out)
}

/// Residual `||sum E - I||` of a family of effects.
pub fn completeness_residual(effects: &[OperatorMatrix]) -> Result<f64> {
    let d = effects.first().map(|e| e.dim()).ok_or_else(|| Error::InvalidArgument("no effects given".into()))?;
    let mut sum = -linalg::identity(d);
    for e in effects {
        if e.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: e.dim() });
        }
        sum = sum + e.matrix();
    }
    linalg::hermitian_norm(&sum)
}

/// `p_alpha = Tr(E_alpha rho)`.
pub fn born_probabilities(rho: &DensityOperator, effects: &[OperatorMatrix]) -> Vec<f64> {
    effects
        .iter()
        .map(|e| {
            let m = e.matrix();
            let r = rho.matrix();
            // Tr(E rho) = sum_ij E_ij rho_ji
            let mut acc = C64::new(0.0, 0.0);
            for ((i, j), v) in m.indexed_iter() {
                acc += v * r[[j, i]];
            }
            acc.re
        })
        .collect()
}

/// Index selected by inverse-CDF sampling of a uniform draw in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> Result<usize> {
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateProbabilities);
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if target < acc {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Sample an outcome and return the Lüders post-measurement state.
pub fn povm_apply(rho: &DensityOperator, effects: &[OperatorMatrix], u: f64) -> Result<(usize, DensityOperator)> {
    let residual = completeness_residual(effects)?;
    if residual > 1e-6 {
        return Err(Error::IncompletePovm { residual });
    }
    if effects[0].dim() != rho.matrix().nrows() {
        return Err(Error::DimensionMismatch {
            expected: rho.matrix().nrows(),
            got: effects[0].dim(),
        });
    }
    let probs = born_probabilities(rho, effects);
    let k = sample_index(&probs, u)?;
    let root = operator_sqrt(&effects[k])?;
    let post = root.matrix().dot(rho.matrix()).dot(root.matrix());
    let tr = linalg::trace(&post).re;
    let post = post.mapv(|v| v / tr);
    Ok((k, DensityOperator::unchecked(rho.grid(), post)?))
}

/// Pure state of a pointer grid tensored with an observed grid.
///
/// `amplitudes[[i, j]]` is the coefficient of pointer basis vector `i` times
/// observed basis vector `j`, both orthonormal.
#[derive(Debug, Clone)]
pub struct CompositeState {
    pub pointer: PhaseGrid,
    pub observed: PhaseGrid,
    pub amplitudes: Array2<C64>,
}

impl CompositeState {
    pub fn product(pointer: &WaveFunction, observed: &WaveFunction) -> Self {
        let a = pointer.unit_vector();
        let b = observed.unit_vector();
        Self {
            pointer: *pointer.grid(),
            observed: *observed.grid(),
            amplitudes: Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j]),
        }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Reduced pointer density matrix in the orthonormal basis.
    pub fn pointer_density(&self) -> Array2<C64> {
        self.amplitudes.dot(&linalg::adjoint(&self.amplitudes))
    }

    pub fn pointer_state(&self) -> Result<DensityOperator> {
        DensityOperator::unchecked(&self.pointer, self.pointer_density())
    }

    /// `<a (x) b | self>`.
    pub fn overlap_product(&self, a: &Array1<C64>, b: &Array1<C64>) -> C64 {
        let ab = self.amplitudes.dot(&b.mapv(|v| v.conj()));
        linalg::inner(a, &ab)
    }
}

/// Apply the von Neumann coupling `sum_j U_j (x) |j><j| + I (x) (I - sum_j |j><j|)`
/// to `|ready> (x) |observed>`.
pub fn measurement_premeasurement(
    ready: &WaveFunction,
    observed: &WaveFunction,
    basis: &[WaveFunction],
    coupling: &[OperatorMatrix],
) -> Result<CompositeState> {
    if basis.len() != coupling.len() || basis.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need one coupling unitary per basis state, got {} and {}",
            coupling.len(),
            basis.len()
        )));
    }
    let r = ready.unit_vector();
    let pointers: Vec<Array1<C64>> = coupling
        .iter()
        .map(|u| {
            if u.dim() != r.len() {
                Err(Error::DimensionMismatch { expected: r.len(), got: u.dim() })
            } else {
                Ok(u.apply(&r))
            }
        })
        .collect::<Result<_>>()?;
    for i in 0..pointers.len() {
        for j in 0..i {
            let overlap = linalg::inner(&pointers[i], &pointers[j]).norm();
            if overlap > 1e-8 {
                return Err(Error::NonOrthogonal { overlap });
            }
        }
    }
    let o = observed.unit_vector();
    let kets: Vec<Array1<C64>> = basis.iter().map(|b| b.unit_vector()).collect();
    let coeffs: Vec<C64> = kets.iter().map(|k| linalg::inner(k, &o)).collect();
    let mut rest = o.clone();
    for (k, c) in kets.iter().zip(&coeffs) {
        rest = rest - k.mapv(|v| v * c);
    }
    let mut amplitudes = Array2::from_shape_fn((r.len(), o.len()), |(i, j)| r[i] * rest[j]);
    for ((k, c), ptr) in kets.iter().zip(&coeffs).zip(&pointers) {
        for i in 0..r.len() {
            for j in 0..o.len() {
                amplitudes[[i, j]] += c * ptr[i] * k[j];
            }
        }
    }
    Ok(CompositeState {
        pointer: *ready.grid(),
        observed: *observed.grid(),
        amplitudes,
    })
}

/// Lowest `count` eigenstates of a Hermitian operator on `grid`.
pub fn eigenstates(h: &OperatorMatrix, grid: &PhaseGrid, count: usize) -> Result<Vec<WaveFunction>> {
    let e = h.eigen()?;
    (0..count.min(e.values.len()))
        .map(|k| {
            let mut v = e.vectors.column(k).to_owned();
            // fix the sign so the largest component is real positive
            let big = v.iter().copied().fold(C64::new(0.0, 0.0), |m, c| if c.norm() > m.norm() { c } else { m });
            let phase = big.conj() / big.norm();
            v.mapv_inplace(|c| c * phase);
            WaveFunction::from_unit_vector(grid, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wigner::{coherent_state, weyl_operator_from_symbol, WeylSymbol};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(d: usize, rank: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let a = Array2::from_shape_fn((d, rank), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        a.dot(&linalg::adjoint(&a))
    }

    fn oscillator(g: &PhaseGrid) -> OperatorMatrix {
        OperatorMatrix::hermitian(weyl_operator_from_symbol(&WeylSymbol::oscillator(g)).unwrap()).unwrap()
    }

    #[test]
    fn propagation() {
        let g = PhaseGrid::new(1, 64, 6.0, 0.5).unwrap();
        let h = oscillator(&g);
        let psi = coherent_state(&[1.0], &[0.3], &g).unwrap();
        let same = schrodinger_propagate(&psi, &h, 0.0).unwrap();
        assert!(linalg::max_abs(&(same.values() - psi.values()).insert_axis(ndarray::Axis(0))) < 1e-15);
        let states = eigenstates(&h, &g, 3).unwrap();
        for (k, s) in states.iter().enumerate() {
            let t = 0.7;
            let out = schrodinger_propagate(s, &h, t).unwrap();
            let ov = s.inner(&out).unwrap();
            assert!((ov.norm() - 1.0).abs() < 1e-10);
            let expected = C64::from_polar(1.0, -(k as f64 + 0.5) * t);
            assert!((ov - expected).norm() < 1e-6);
        }
        let rotated = schrodinger_propagate(&psi, &h, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((rotated.norm() - 1.0).abs() < 1e-10);
        let target = coherent_state(&[0.3], &[-1.0], &g).unwrap();
        assert!((target.inner(&rotated).unwrap().norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn square_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = OperatorMatrix::identity(16);
        assert!(linalg::max_abs(&(operator_sqrt(&id).unwrap().matrix() - id.matrix())) < 1e-12);
        let v = Array1::from_shape_fn(16, |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let v = v.mapv(|c| c / linalg::vec_norm(&v));
        let proj = OperatorMatrix::psd(Array2::from_shape_fn((16, 16), |(i, j)| v[i] * v[j].conj())).unwrap();
        assert!(linalg::max_abs(&(operator_sqrt(&proj).unwrap().matrix() - proj.matrix())) < 1e-8);
        let p = OperatorMatrix::psd(random_psd(20, 12, &mut rng)).unwrap();
        let r = operator_sqrt(&p).unwrap();
        assert!(linalg::max_abs(&(r.matrix().dot(r.matrix()) - p.matrix())) < 1e-8);
        let bad = OperatorMatrix::hermitian(-linalg::identity(4)).unwrap();
        assert!(matches!(operator_sqrt(&bad), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn povm_sampling() {
        let g = PhaseGrid::new(1, 16, 3.0, 1.0).unwrap();
        let h = oscillator(&g);
        let s = eigenstates(&h, &g, 2).unwrap();
        let rho = crate::wigner::WaveFunction::new(&g, s[0].values() + s[1].values()).unwrap().normalized().unwrap().density_operator();
        let (k, post) = povm_apply(&rho, &[OperatorMatrix::identity(16)], 0.7).unwrap();
        assert_eq!(k, 0);
        assert!(linalg::max_abs(&(post.matrix() - rho.matrix())) < 1e-12);
        let p0 = s[0].density_operator().into_matrix();
        let p1 = s[1].density_operator().into_matrix();
        let rest = linalg::identity(16) - &p0 - &p1;
        let effects = vec![
            OperatorMatrix::psd(p0).unwrap(),
            OperatorMatrix::psd(p1).unwrap(),
            OperatorMatrix::psd(rest).unwrap(),
        ];
        let probs = born_probabilities(&rho, &effects);
        assert!((probs[0] - 0.5).abs() < 1e-10 && (probs[1] - 0.5).abs() < 1e-10);
        let (k, post) = povm_apply(&rho, &effects, 0.75).unwrap();
        assert_eq!(k, 1);
        assert!((post.trace() - 1.0).abs() < 1e-10);
        let incomplete = &effects[..2];
        assert!(matches!(povm_apply(&rho, incomplete, 0.1), Err(Error::IncompletePovm { .. })));
        // empirical frequencies within 4 sigma
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| sample_index(&probs, rng.random::<f64>()).unwrap() == 0).count();
        let sigma = (0.25 / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - probs[0]).abs() < 4.0 * sigma);
    }

    #[test]
    fn random_completion_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = PhaseGrid::new(1, 16, 3.0, 1.0).unwrap();
        let a = random_psd(16, 16, &mut rng);
        let b = random_psd(16, 16, &mut rng);
        let s = OperatorMatrix::psd(&a + &b).unwrap();
        let inv_root = s.eigen().unwrap().apply_fn(|l| C64::new(l.powf(-0.5), 0.0));
        let effects: Vec<OperatorMatrix> = [a, b]
            .iter()
            .map(|m| OperatorMatrix::psd(inv_root.dot(m).dot(&inv_root)).unwrap())
            .collect();
        let m = random_psd(16, 3, &mut rng);
        let tr = linalg::trace(&m).re;
        let rho = DensityOperator::new(&g, m.mapv(|v| v / tr)).unwrap();
        let p = born_probabilities(&rho, &effects);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn premeasurement() {
        let pg = PhaseGrid::new(1, 64, 12.0, 1.0).unwrap();
        let og = PhaseGrid::new(1, 16, 3.0, 1.0).unwrap();
        let ready = coherent_state(&[0.0], &[0.0], &pg).unwrap();
        let basis = eigenstates(&oscillator(&og), &og, 2).unwrap();
        let p = OperatorMatrix::hermitian(weyl_operator_from_symbol(&WeylSymbol::momentum(&pg, 0)).unwrap()).unwrap();
        let shifts = [-6.0, 6.0];
        let coupling: Vec<OperatorMatrix> = shifts.iter().map(|s| OperatorMatrix::new(p.propagator(*s, 1.0).unwrap()).unwrap()).collect();
        let outcomes: Vec<Array1<C64>> = shifts.iter().map(|s| coherent_state(&[*s], &[0.0], &pg).unwrap().unit_vector()).collect();
        let comp = measurement_premeasurement(&ready, &basis[1], &basis, &coupling).unwrap();
        assert!((comp.overlap_product(&outcomes[1], &basis[1].unit_vector()).norm() - 1.0).abs() < 1e-8);
        for c in [(0.6, 0.8), (0.5f64.sqrt(), 0.5f64.sqrt())] {
            let obs = WaveFunction::new(&og, basis[0].values() * c.0 + &(basis[1].values() * c.1)).unwrap();
            let comp = measurement_premeasurement(&ready, &obs, &basis, &coupling).unwrap();
            assert!((comp.norm() - 1.0).abs() < 1e-10);
            let a0 = comp.overlap_product(&outcomes[0], &basis[0].unit_vector());
            let a1 = comp.overlap_product(&outcomes[1], &basis[1].unit_vector());
            assert!((a0 - c.0).norm() < 1e-8 && (a1 - c.1).norm() < 1e-8);
        }
        let same = vec![coupling[0].clone(), coupling[0].clone()];
        assert!(matches!(
            measurement_premeasurement(&ready, &basis[0], &basis, &same),
            Err(Error::NonOrthogonal { .. })
        ));
    }
}
