//! Coarse-graining partitions, quasiprojectors and classicality projectors.
//!
//! A region is an axis-aligned box of grid cells. Its quasiprojector is the
//! coherent-state integral `(2 pi hbar)^{-n} sum_{z in R} |z><z| dz` evaluated
//! with one dyad per cell, and its symbol is `chi_R * phi` where `phi` is the
//! grid's own Wigner function of the ground coherent state. With that kernel
//! the two definitions agree to rounding, at every grid size.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::sync::{Arc, OnceLock};

use crate::classical::CellMask;
use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::linalg::{self, Eigh};
use crate::oracle::{operator_sqrt, OperatorMatrix};
use crate::spectral::{self, fft_in_place, ifft_in_place, C64};
use crate::wigner::{wigner_from_density, WaveFunction, WeylSymbol};

/// Interior cut points per logical axis (`0..n` positions, `n..2n` momenta).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpec {
    pub cuts: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

impl BoxSpec {
    pub fn new(cuts: Vec<Vec<f64>>) -> Self {
        Self { cuts, labels: None }
    }

    /// Whole phase space as one region.
    pub fn whole(dof: usize) -> Self {
        Self::new(vec![Vec::new(); 2 * dof])
    }

    /// Split along position axis 0 at `x`.
    pub fn half_planes(dof: usize, x: f64) -> Self {
        let mut cuts = vec![Vec::new(); 2 * dof];
        cuts[0] = vec![x];
        Self::new(cuts)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }
}

/// Cell index range `[start, end)` and snapped edges along one logical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisInterval {
    pub start: usize,
    pub end: usize,
    /// `-inf` / `+inf` for intervals touching the grid edge.
    pub lower: f64,
    pub upper: f64,
}

impl AxisInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index < self.end
    }
}

#[derive(Debug)]
pub struct Region {
    label: String,
    intervals: Vec<AxisInterval>,
    mask: CellMask,
    symbol: WeylSymbol,
    operator: OperatorMatrix,
    sqrt: OnceLock<OperatorMatrix>,
}

impl Region {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn intervals(&self) -> &[AxisInterval] {
        &self.intervals
    }

    pub fn mask(&self) -> &CellMask {
        &self.mask
    }

    pub fn symbol(&self) -> &WeylSymbol {
        &self.symbol
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.operator
    }

    /// `Pi_R^{1/2}`, computed on first use.
    pub fn sqrt(&self) -> Result<&OperatorMatrix> {
        if let Some(s) = self.sqrt.get() {
            return Ok(s);
        }
        let s = operator_sqrt(&self.operator)?;
        Ok(self.sqrt.get_or_init(|| s))
    }

    /// Real values of the quasiprojector symbol.
    pub fn symbol_values(&self) -> Array2<f64> {
        self.symbol.values().mapv(|v| v.re)
    }

    /// Whether a phase point lies in the box (snapped edges, lower edge open).
    pub fn contains_point(&self, x: &[f64], p: &[f64]) -> bool {
        let coords: Vec<f64> = x.iter().chain(p).copied().collect();
        self.intervals.iter().zip(coords).all(|(iv, c)| c > iv.lower && c <= iv.upper)
    }
}

/// Ordered list of regions covering every cell exactly once.
#[derive(Debug, Clone)]
pub struct Partition {
    grid: PhaseGrid,
    spec: BoxSpec,
    phi: Arc<Array2<f64>>,
    regions: Vec<Arc<Region>>,
}

impl Partition {
    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn regions(&self) -> &[Arc<Region>] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.label == label)
    }

    /// Index of the region containing a phase point.
    pub fn region_of(&self, x: &[f64], p: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.contains_point(x, p))
    }

    pub fn operators(&self) -> Vec<OperatorMatrix> {
        self.regions.iter().map(|r| r.operator.clone()).collect()
    }
}

/// Minimum admissible box side `5 sqrt(hbar)`.
pub fn minimum_side(grid: &PhaseGrid) -> f64 {
    5.0 * grid.hbar().sqrt()
}

/// Ground coherent state sampled with periodic images, as a unit vector.
fn ground_vector(grid: &PhaseGrid) -> Array1<C64> {
    let n = grid.points();
    let period = n as f64 * grid.dx();
    let mut v: Array1<C64> = (0..n)
        .map(|j| {
            let x = grid.x_at(j);
            let s: f64 = (-2..=2).map(|img| (-(x + img as f64 * period).powi(2) / (2.0 * grid.hbar())).exp()).sum();
            C64::new(s, 0.0)
        })
        .collect();
    let norm = linalg::vec_norm(&v);
    v.mapv_inplace(|c| c / norm);
    v
}

/// Discrete Wigner function of the ground coherent state, unit integral.
pub fn smoothing_kernel(grid: &PhaseGrid) -> Result<Array2<f64>> {
    let axis = grid.axis_grid();
    // the periodized ground state is used as is, without the containment check
    let w1 = wigner_from_density(&WaveFunction::from_unit_vector(&axis, ground_vector(grid))?.density_operator())?;
    let w1 = w1.values();
    let n = grid.points();
    Ok(match grid.dof() {
        1 => w1.clone(),
        _ => Array2::from_shape_fn((n * n, n * n), |(i, k)| w1[[i / n, k / n]] * w1[[i % n, k % n]]),
    })
}

fn split_axis(grid: &PhaseGrid, axis: usize, cuts: &[f64]) -> Result<Vec<AxisInterval>> {
    let n = grid.points();
    let is_x = axis < grid.dof();
    let (step, extent) = if is_x { (grid.dx(), grid.x_extent()) } else { (grid.dp(), grid.p_extent()) };
    let coord = |i: usize| if is_x { grid.x_at(i) } else { grid.p_at(i) };
    let name = if is_x { "x" } else { "p" };
    for w in cuts.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument(format!("{name} boundaries must be strictly increasing, got {cuts:?}")));
        }
    }
    for c in cuts {
        if !c.is_finite() || c.abs() >= extent {
            return Err(Error::InvalidArgument(format!(
                "{name} boundary {c} must lie strictly inside the grid half-width {extent:.4}"
            )));
        }
    }
    // A cell belongs to the interval whose upper cut is at or above it.
    let tol = 1e-9 * step;
    let which = |i: usize| cuts.iter().filter(|&&c| c < coord(i) - tol).count();
    let mut out = Vec::new();
    for m in 0..=cuts.len() {
        let members: Vec<usize> = (0..n).filter(|&i| which(i) == m).collect();
        let (start, end) = match (members.first(), members.last()) {
            (Some(&a), Some(&b)) => (a, b + 1),
            _ => (0, 0),
        };
        let lower = if m == 0 { f64::NEG_INFINITY } else { coord(start) - 0.5 * step };
        let upper = if m == cuts.len() { f64::INFINITY } else { coord(end - 1) + 0.5 * step };
        out.push(AxisInterval { start, end, lower, upper });
    }
    Ok(out)
}

/// One-dof quasiprojector for a cell mask, `(1/N) sum_{(j,k) in mask} |x_j,p_k><x_j,p_k|`.
fn mask_operator_1d(grid: &PhaseGrid, cells: &Array2<bool>, ground: &Array1<C64>) -> Array2<C64> {
    let n = grid.points();
    let mut out = Array2::<C64>::zeros((n, n));
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        if !cells.row(j).iter().any(|&c| c) {
            continue;
        }
        // d(m) = sum_{k in row} exp(2 pi i (k - N/2) m / N)
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if cells[[j, k]] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        }
        ifft_in_place(&mut buf);
        let d: Vec<C64> = (0..n)
            .map(|m| buf[m] * n as f64 * if m % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let shift = j as i64 - (n / 2) as i64;
        let f: Vec<C64> = (0..n).map(|r| ground[(r as i64 - shift).rem_euclid(n as i64) as usize]).collect();
        for r in 0..n {
            if f[r].norm() < 1e-300 {
                continue;
            }
            for s in 0..n {
                out[[r, s]] += f[r] * f[s].conj() * d[(r + n - s) % n];
            }
        }
    }
    out.mapv(|v| v / n as f64)
}

fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| a[[i / rb, j / cb]] * b[[i % rb, j % cb]])
}

/// Quasiprojector operator of an arbitrary cell mask (one degree of freedom).
pub fn mask_operator(mask: &CellMask) -> Result<OperatorMatrix> {
    let grid = mask.grid();
    if grid.dof() != 1 {
        return Err(Error::InvalidArgument("general cell masks are supported for one degree of freedom only".into()));
    }
    let m = mask_operator_1d(grid, mask.cells(), &ground_vector(grid));
    OperatorMatrix::hermitian((&m + &linalg::adjoint(&m)).mapv(|v| v * 0.5))
}

/// `chi * phi` by FFT convolution on the periodic grid.
fn convolve(chi: &Array2<f64>, phi: &Array2<f64>, grid: &PhaseGrid) -> Array2<f64> {
    let n = grid.points();
    let half = n / 2;
    let mut a = chi.mapv(|v| C64::new(v, 0.0));
    let mut b = phi.mapv(|v| C64::new(v, 0.0));
    for axis in 0..2 * grid.dof() {
        spectral::map_lanes(&mut a, grid, axis, fft_in_place);
        // move the kernel origin from index N/2 to 0 before transforming
        spectral::map_lanes(&mut b, grid, axis, |lane| {
            lane.rotate_left(half);
            fft_in_place(lane);
        });
    }
    let mut c = a * b;
    for axis in 0..2 * grid.dof() {
        spectral::map_lanes(&mut c, grid, axis, ifft_in_place);
    }
    c.mapv(|v| v.re * grid.cell_volume())
}

/// Quasiprojector symbol `Pi_R = chi_R * phi`, clipped into `[0, 1]` against rounding.
pub fn quasiprojector_symbol(mask: &CellMask, phi: &Array2<f64>) -> Result<WeylSymbol> {
    let grid = mask.grid();
    let chi = mask.cells().mapv(|c| if c { 1.0 } else { 0.0 });
    let s = convolve(&chi, phi, grid).mapv(|v| v.clamp(0.0, 1.0));
    WeylSymbol::real(grid, s)
}

type Layout = (Vec<Vec<AxisInterval>>, Vec<Vec<usize>>, Vec<String>);

/// Check a box spec against the grid and the `5 sqrt(hbar)` side rule without building operators.
pub fn validate_box_spec(grid: &PhaseGrid, spec: &BoxSpec) -> Result<usize> {
    Ok(layout(grid, spec)?.1.len())
}

fn layout(grid: &PhaseGrid, spec: &BoxSpec) -> Result<Layout> {
    let n = grid.dof();
    if spec.cuts.len() != 2 * n {
        return Err(Error::InvalidArgument(format!(
            "box spec needs {} boundary arrays (x then p per axis), got {}",
            2 * n,
            spec.cuts.len()
        )));
    }
    let axes: Vec<Vec<AxisInterval>> = (0..2 * n)
        .map(|a| split_axis(grid, a, &spec.cuts[a]))
        .collect::<Result<_>>()?;
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for ax in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| (0..ax.len()).map(move |i| [c.clone(), vec![i]].concat()))
            .collect();
    }
    let labels: Vec<String> = match &spec.labels {
        Some(l) if l.len() == combos.len() => l.clone(),
        Some(l) => {
            return Err(Error::InvalidArgument(format!(
                "{} labels given for {} regions",
                l.len(),
                combos.len()
            )))
        }
        None => combos
            .iter()
            .map(|c| format!("R{}", c.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("")))
            .collect(),
    };
    let min = minimum_side(grid);
    for (c, label) in combos.iter().zip(&labels) {
        for (a, &i) in c.iter().enumerate() {
            let iv = &axes[a][i];
            let step = if a < n { grid.dx() } else { grid.dp() };
            let side = iv.len() as f64 * step;
            if side < min - 1e-12 {
                let axis = if a < n { format!("x{a}") } else { format!("p{}", a - n) };
                return Err(Error::RegionTooSmall { label: label.clone(), axis, side, minimum: min });
            }
        }
    }
    Ok((axes, combos, labels))
}

/// Build the partition described by `spec`, enforcing the `5 sqrt(hbar)` side rule.
pub fn build_partition(grid: &PhaseGrid, spec: &BoxSpec) -> Result<Partition> {
    let (axes, combos, labels) = layout(grid, spec)?;
    let phi = Arc::new(smoothing_kernel(grid)?);
    let ground = ground_vector(grid);
    let regions: Vec<Arc<Region>> = combos
        .par_iter()
        .zip(labels.par_iter())
        .map(|(c, label)| {
            let intervals: Vec<AxisInterval> = c.iter().enumerate().map(|(a, &i)| axes[a][i].clone()).collect();
            build_region(grid, label.clone(), intervals, &phi, &ground).map(Arc::new)
        })
        .collect::<Result<_>>()?;
    Ok(Partition {
        grid: *grid,
        spec: spec.clone(),
        phi,
        regions,
    })
}

fn build_region(
    grid: &PhaseGrid,
    label: String,
    intervals: Vec<AxisInterval>,
    phi: &Array2<f64>,
    ground: &Array1<C64>,
) -> Result<Region> {
    let n = grid.dof();
    let pts = grid.points();
    let d = grid.dim();
    let cells = Array2::from_shape_fn((d, d), |(i, k)| {
        let xi = grid.unravel(i);
        let pk = grid.unravel(k);
        (0..n).all(|a| intervals[a].contains(xi[a]) && intervals[n + a].contains(pk[a]))
    });
    let mask = CellMask::new(grid, cells)?;
    let symbol = quasiprojector_symbol(&mask, phi)?;
    let mut op = Array2::<C64>::zeros((1, 1));
    for a in 0..n {
        let axis_cells = Array2::from_shape_fn((pts, pts), |(j, k)| intervals[a].contains(j) && intervals[n + a].contains(k));
        let factor = mask_operator_1d(&grid.axis_grid(), &axis_cells, ground);
        op = if a == 0 { factor } else { kron(&op, &factor) };
    }
    let op = (&op + &linalg::adjoint(&op)).mapv(|v| v * 0.5);
    Ok(Region {
        label,
        intervals,
        mask,
        symbol,
        operator: OperatorMatrix::hermitian(op)?,
        sqrt: OnceLock::new(),
    })
}

/// Quasiprojector operator of a region in a built partition.
pub fn quasiprojector_operator(region: &Region) -> &OperatorMatrix {
    region.operator()
}

/// Mutual-orthogonality defect of the quasiprojectors of a partition.
#[derive(Debug, Clone)]
pub struct DefectReport {
    /// `max_{a,b} ||P_a P_b - delta_ab P_a||_1 / Tr P_a`, the measure that scales as `hbar^{1/2}`.
    pub defect: f64,
    /// Same pairs in operator norm; saturates at 1/4 for any sharp edge.
    pub operator_norm: f64,
    /// Relative trace-norm entries per ordered pair.
    pub pairs: Array2<f64>,
}

pub fn quasiprojector_defect(partition: &Partition) -> DefectReport {
    let ops = partition.operators();
    let k = ops.len();
    let traces: Vec<f64> = ops.iter().map(|o| linalg::trace(o.matrix()).re).collect();
    let entries: Vec<(f64, f64)> = (0..k * k)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / k, ab % k);
            let mut m = ops[a].matrix().dot(ops[b].matrix());
            if a == b {
                m = m - ops[a].matrix();
            }
            let rel = linalg::trace_norm(&m) / traces[a].max(f64::MIN_POSITIVE);
            (rel, linalg::operator_norm(&m))
        })
        .collect();
    let pairs = Array2::from_shape_fn((k, k), |(a, b)| entries[a * k + b].0);
    DefectReport {
        defect: entries.iter().map(|e| e.0).fold(0.0, f64::max),
        operator_norm: entries.iter().map(|e| e.1).fold(0.0, f64::max),
        pairs,
    }
}

/// Exact projectors close to the quasiprojectors.
#[derive(Debug, Clone)]
pub struct ClassicalityProjectors {
    pub projectors: Vec<OperatorMatrix>,
    pub ranks: Vec<usize>,
    /// `||P_perp - P||_1 / Tr P` per region.
    pub closeness: Vec<f64>,
}

/// Ranks from the quasiprojector traces by largest remainder, so they sum to the dimension.
fn assign_ranks(traces: &[f64], dim: usize) -> Vec<usize> {
    let mut ranks: Vec<usize> = traces.iter().map(|t| t.max(0.0).floor() as usize).collect();
    let assigned: usize = ranks.iter().sum();
    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by(|&a, &b| (traces[b] - traces[b].floor()).total_cmp(&(traces[a] - traces[a].floor())));
    for &i in order.iter().take(dim.saturating_sub(assigned)) {
        ranks[i] += 1;
    }
    ranks
}

/// Top eigenvectors of each quasiprojector, stacked and Löwdin-orthonormalized.
pub fn classicality_projectors(partition: &Partition) -> Result<ClassicalityProjectors> {
    let ops = partition.operators();
    let dim = partition.grid().dim();
    let traces: Vec<f64> = ops.iter().map(|o| linalg::trace(o.matrix()).re).collect();
    let ranks = assign_ranks(&traces, dim);
    if ranks.iter().sum::<usize>() != dim {
        return Err(Error::ProjectorConstruction {
            reason: format!("ranks {ranks:?} do not add up to {dim}"),
            spectrum: traces,
        });
    }
    let mut v = Array2::<C64>::zeros((dim, dim));
    let mut col = 0;
    for (op, &r) in ops.iter().zip(&ranks) {
        let e = op.eigen()?;
        for c in 0..r {
            v.column_mut(col).assign(&e.vectors.column(dim - 1 - c));
            col += 1;
        }
    }
    let gram = Eigh::new(&linalg::adjoint(&v).dot(&v))?;
    if gram.min() < 1e-10 {
        return Err(Error::ProjectorConstruction {
            reason: "stacked eigenvectors are linearly dependent".into(),
            spectrum: gram.values.clone(),
        });
    }
    let u = v.dot(&gram.apply_fn(|l| C64::new(l.powf(-0.5), 0.0)));
    let mut projectors = Vec::with_capacity(ops.len());
    let mut closeness = Vec::with_capacity(ops.len());
    let mut start = 0;
    for ((op, &r), tr) in ops.iter().zip(&ranks).zip(&traces) {
        let block = u.slice(ndarray::s![.., start..start + r]);
        let p = block.dot(&linalg::adjoint(&block.to_owned()));
        closeness.push(linalg::trace_norm(&(&p - op.matrix())) / tr.max(f64::MIN_POSITIVE));
        let mut p_op = OperatorMatrix::hermitian((&p + &linalg::adjoint(&p)).mapv(|v| v * 0.5))?;
        if r == 0 {
            p_op = OperatorMatrix::hermitian(Array2::zeros((dim, dim)))?;
        }
        projectors.push(p_op);
        start += r;
    }
    Ok(ClassicalityProjectors {
        projectors,
        ranks,
        closeness,
    })
}

/// Outcome of a quasirestriction test.
#[derive(Debug, Clone, Copy)]
pub struct Quasirestriction {
    pub restricted: bool,
    pub residual: f64,
}

/// Norm of the part of the columns of `m` outside the range of `Pi_R^{1/2}`.
///
/// The range keeps singular values of the square root above 1e-6. For a single
/// state pass one column; for `Pi_R (x) I` pass the amplitude matrix.
pub fn range_residual(op: &OperatorMatrix, m: &Array2<C64>) -> Result<f64> {
    let e = op.eigen()?;
    if m.nrows() != e.values.len() {
        return Err(Error::DimensionMismatch {
            expected: e.values.len(),
            got: m.nrows(),
        });
    }
    let cutoff = 1e-6f64.powi(2);
    let kept: Vec<usize> = (0..e.values.len()).filter(|&c| e.values[c] > cutoff).collect();
    let basis = Array2::from_shape_fn((m.nrows(), kept.len()), |(r, c)| e.vectors[[r, kept[c]]]);
    let coeffs = linalg::adjoint(&basis).dot(m);
    let inside: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let total: f64 = m.iter().map(|c| c.norm_sqr()).sum();
    Ok((total - inside).max(0.0).sqrt())
}

/// Whether `psi` lies in the range of `Pi_R^{1/2}` up to `tol`.
pub fn is_quasirestricted(psi: &WaveFunction, region: &Region, tol: f64) -> Result<Quasirestriction> {
    let v = psi.unit_vector();
    let n = v.len();
    let residual = range_residual(region.operator(), &v.into_shape_with_order((n, 1)).expect("column"))?;
    Ok(Quasirestriction {
        restricted: residual < tol,
        residual,
    })
}

/// Cells where `Pi_R > 1 - eps`.
pub fn interior_region(region: &Region, eps: f64) -> Result<CellMask> {
    let s = region.symbol_values();
    let cells = s.mapv(|v| v > 1.0 - eps);
    if !cells.iter().any(|&c| c) {
        return Err(Error::EmptyInterior {
            label: region.label.clone(),
            eps,
        });
    }
    CellMask::new(region.mask().grid(), cells)
}

/// Number of quasiprojector eigenvalues above `level`.
pub fn eigenvalues_above(region: &Region, level: f64) -> Result<usize> {
    Ok(region.operator().eigen()?.values.iter().filter(|&&l| l > level).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wigner::{coherent_state, weyl_symbol_from_operator};
    use proptest::prelude::*;

    fn sum_ops(p: &Partition) -> Array2<C64> {
        p.operators().iter().fold(Array2::zeros((p.grid().dim(), p.grid().dim())), |a, o| a + o.matrix())
    }

    fn three_by_three() -> Partition {
        let g = PhaseGrid::new(1, 144, 4.75, 0.1).unwrap();
        let c = 4.75 / 3.0;
        build_partition(&g, &BoxSpec::new(vec![vec![-c, c], vec![-c, c]])).unwrap()
    }

    #[test]
    fn whole_space_is_identity() {
        let g = PhaseGrid::symmetric(1, 32, 0.5).unwrap();
        let p = build_partition(&g, &BoxSpec::whole(1)).unwrap();
        assert_eq!(p.len(), 1);
        assert!(linalg::max_abs(&(p.regions()[0].operator().matrix() - &linalg::identity(32))) < 1e-12);
        assert!(p.regions()[0].symbol_values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn symbol_and_operator_agree() {
        let p = three_by_three();
        assert!(linalg::max_abs(&(sum_ops(&p) - linalg::identity(144))) < 1e-12);
        for r in p.regions() {
            let s = weyl_symbol_from_operator(r.operator().matrix(), p.grid()).unwrap();
            let diff = (s.values().mapv(|v| v.re) - r.symbol_values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-10, "{}: {diff}", r.label());
        }
    }

    #[test]
    fn half_plane_edge_profile() {
        let g = PhaseGrid::symmetric(1, 256, 1.0 / 16.0).unwrap();
        let part = build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap();
        let left = &part.regions()[0];
        assert_eq!(left.intervals()[0].end, 129);
        let s = left.symbol_values();
        let edge = left.intervals()[0].upper;
        let at_edge = spectral::interpolate(&s, &g, &[edge], &[0.3]);
        assert!((at_edge - 0.5).abs() < 1e-3, "{at_edge}");
        // 10-90 % width of 1/2 erfc(x / sqrt(hbar)) is 1.8124 sqrt(hbar)
        let col = g.nearest_p(0.0).unwrap();
        let crossing = |level: f64| {
            let j = (100..200).find(|&j| s[[j, col]] >= level && s[[j + 1, col]] < level).unwrap();
            let (a, b) = (s[[j, col]], s[[j + 1, col]]);
            g.x_at(j) + (a - level) / (a - b) * g.dx()
        };
        let width = (crossing(0.1) - crossing(0.9)) / g.hbar().sqrt();
        assert!((width - 1.8124).abs() < 0.02, "{width}");
    }

    #[test]
    fn small_boxes_are_rejected() {
        let g = PhaseGrid::symmetric(1, 64, 0.25).unwrap();
        let err = build_partition(&g, &BoxSpec::new(vec![vec![-1.0, 1.0], vec![]])).unwrap_err();
        assert!(matches!(err, Error::RegionTooSmall { .. }), "{err}");
        let err = build_partition(&g, &BoxSpec::new(vec![vec![1.0, -1.0], vec![]])).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn half_plane_defect_values() {
        // independent dense evaluation of the same quadrature
        for (hbar, n, expected) in [(1.0, 20, 0.153_960_953_83), (0.25, 64, 0.081_469_105_63), (1.0 / 16.0, 256, 0.040_019_910_96)] {
            let g = PhaseGrid::symmetric(1, n, hbar).unwrap();
            let p = build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap();
            let d = quasiprojector_defect(&p);
            assert!((d.defect - expected).abs() < 1e-8, "{hbar}: {}", d.defect);
            assert!(d.operator_norm <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn loewdin_projectors() {
        let p = three_by_three();
        let d = quasiprojector_defect(&p);
        assert!((d.defect - 0.155_392_172_63).abs() < 1e-8, "{}", d.defect);
        let c = classicality_projectors(&p).unwrap();
        assert_eq!(c.ranks, vec![17, 16, 16, 16, 16, 16, 16, 15, 16]);
        let max_close = c.closeness.iter().fold(0.0f64, |m, v| m.max(*v));
        assert!((max_close - 0.238_607_310_30).abs() < 1e-6, "{max_close}");
        assert!(max_close <= 3.0 * d.defect);
        let mut total = Array2::zeros((144, 144));
        for (a, pa) in c.projectors.iter().enumerate() {
            let m = pa.matrix();
            assert!(linalg::max_abs(&(m.dot(m) - m)) < 1e-10);
            for pb in &c.projectors[a + 1..] {
                assert!(linalg::max_abs(&m.dot(pb.matrix())) < 1e-10);
            }
            total = total + m;
        }
        assert!(linalg::max_abs(&(total - linalg::identity(144))) < 1e-10);
        let psi = coherent_state(&[0.0], &[0.0], p.grid()).unwrap().unit_vector();
        let centre = p.index_of("R11").unwrap();
        let diff = (c.projectors[centre].matrix() - p.regions()[centre].operator().matrix()).dot(&psi);
        assert!(linalg::vec_norm(&diff) < 1e-3, "{}", linalg::vec_norm(&diff));
    }

    #[test]
    fn quasirestriction() {
        let g = PhaseGrid::symmetric(1, 256, 1.0 / 16.0).unwrap();
        let part = build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap();
        let left = &part.regions()[0];
        let inside = coherent_state(&[-2.5], &[0.0], &g).unwrap();
        let outside = coherent_state(&[2.5], &[0.0], &g).unwrap();
        let a = is_quasirestricted(&inside, left, 1e-6).unwrap();
        let b = is_quasirestricted(&outside, left, 1e-6).unwrap();
        assert!(a.restricted, "{}", a.residual);
        assert!(!b.restricted && b.residual > 0.5, "{}", b.residual);
    }

    #[test]
    fn interior_margin_matches_erfc() {
        let g = PhaseGrid::symmetric(1, 256, 1.0 / 16.0).unwrap();
        let part = build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap();
        let left = &part.regions()[0];
        let inner = interior_region(left, 1e-6).unwrap();
        let col = g.nearest_p(0.0).unwrap();
        let last = (0..256).filter(|&j| inner.cells()[[j, col]]).max().unwrap();
        // 1/2 erfc(m / sqrt(hbar)) = 1e-6
        let m = libm::erfc(3.361_250_2) / 2.0;
        assert!((m - 1e-6).abs() < 1e-9);
        let predicted = left.intervals()[0].upper - 3.361_250_2 * g.hbar().sqrt();
        assert!((g.x_at(last) - predicted).abs() <= g.dx(), "{} vs {predicted}", g.x_at(last));

        let s = g.hbar().sqrt();
        let narrow = build_partition(&g, &BoxSpec::new(vec![vec![-2.6 * s, 2.6 * s], vec![-2.6 * s, 2.6 * s]])).unwrap();
        let err = interior_region(&narrow.regions()[4], 1e-6).unwrap_err();
        assert!(matches!(err, Error::EmptyInterior { .. }));
        let wide = build_partition(&g, &BoxSpec::new(vec![vec![-4.0 * s, 4.0 * s], vec![-4.0 * s, 4.0 * s]])).unwrap();
        assert!(interior_region(&wide.regions()[4], 1e-6).unwrap().count() > 0);
    }

    #[test]
    fn two_dof_half_spaces() {
        let g = PhaseGrid::symmetric(2, 20, 1.0).unwrap();
        let p = build_partition(&g, &BoxSpec::half_planes(2, 0.0)).unwrap();
        assert_eq!(p.len(), 2);
        assert!(linalg::max_abs(&(sum_ops(&p) - linalg::identity(400))) < 1e-12);
        let s = weyl_symbol_from_operator(p.regions()[0].operator().matrix(), &g).unwrap();
        let diff = (s.values().mapv(|v| v.re) - p.regions()[0].symbol_values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-10, "{diff}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn partitions_resolve_identity(xc in -2.3f64..2.3, pc in -2.3f64..2.3) {
            let g = PhaseGrid::symmetric(1, 64, 0.25).unwrap();
            let p = build_partition(&g, &BoxSpec::new(vec![vec![xc], vec![pc]])).unwrap();
            prop_assert_eq!(p.len(), 4);
            prop_assert!(linalg::max_abs(&(sum_ops(&p) - linalg::identity(64))) < 1e-12);
            let total = p.regions().iter().fold(Array2::<f64>::zeros((64, 64)), |a, r| a + r.symbol_values());
            prop_assert!(total.iter().all(|v| (v - 1.0).abs() < 1e-10));
            prop_assert_eq!(p.regions().iter().map(|r| r.mask().count()).sum::<usize>(), 64 * 64);
        }
    }
}
