//! Scenario assembly and run orchestration.

use log::{info, warn};
use ndarray::{Array1, Array2};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::coarse::{build_partition, classicality_projectors, range_residual, Partition};
use crate::config::{HamiltonianConfig, ScenarioConfig, StateConfig};
use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::io;
use crate::linalg::{self, Eigh};
use crate::moyal::HamiltonianSymbol;
use crate::oracle::{self, born_probabilities, measurement_premeasurement, CompositeState, OperatorMatrix};
use crate::spectral::{fft_in_place, ifft_in_place, signed_freq, C64};
use crate::transition::{
    expectation_probabilities, initial_region, run_ensemble, zeno_experiment, Backend, EnsembleSummary,
    ProjectionSchedule, TrajectoryOptions, TrajectoryRecord, TrajectorySystem, UpdateRule, ZenoReport,
};
use crate::wigner::{coherent_state, wigner_from_density, DensityOperator, WaveFunction, WeylSymbol, WignerState};

/// Weyl symbol of a one-body preset on `grid`.
pub fn hamiltonian_symbol(h: &HamiltonianConfig, grid: &PhaseGrid) -> Result<WeylSymbol> {
    let kinetic = |m: f64, p: &[f64]| p.iter().map(|v| v * v).sum::<f64>() / (2.0 * m);
    Ok(match *h {
        HamiltonianConfig::Free { mass } => WeylSymbol::from_fn(grid, |_, p| kinetic(mass, p)),
        HamiltonianConfig::Oscillator { mass, omega } => WeylSymbol::from_fn(grid, |x, p| {
            kinetic(mass, p) + 0.5 * mass * omega * omega * x.iter().map(|v| v * v).sum::<f64>()
        }),
        HamiltonianConfig::DoubleWell { mass, v0, b } => WeylSymbol::from_fn(grid, |x, p| {
            kinetic(mass, p) + x.iter().map(|v| v0 * (v * v / (b * b) - 1.0).powi(2)).sum::<f64>()
        }),
        HamiltonianConfig::VonNeumannCoupling { .. } => {
            return Err(Error::InvalidArgument("the coupling preset acts on a composite system".into()))
        }
    })
}

/// Lowest doublet of `h` rotated to be localized on one side of `x = 0`.
pub fn well_localized_state(h: &OperatorMatrix, grid: &PhaseGrid, left: bool) -> Result<WaveFunction> {
    let pair = oracle::eigenstates(h, grid, 2)?;
    let (a, b) = (pair[0].unit_vector(), pair[1].unit_vector());
    let x: Array1<C64> = (0..grid.dim()).map(|i| C64::new(grid.position(i)[0], 0.0)).collect();
    let xa = &a * &x;
    let xb = &b * &x;
    let m = Array2::from_shape_vec(
        (2, 2),
        vec![linalg::inner(&a, &xa), linalg::inner(&a, &xb), linalg::inner(&b, &xa), linalg::inner(&b, &xb)],
    )
    .expect("2x2");
    let e = Eigh::new(&m)?;
    let col = if left { 0 } else { 1 };
    let v = a.mapv(|c| c * e.vectors[[0, col]]) + b.mapv(|c| c * e.vectors[[1, col]]);
    WaveFunction::from_unit_vector(grid, v)
}

/// Shift a periodic lattice vector by `shift` in position (`psi(x) -> psi(x - shift)`).
pub fn translate(v: &Array1<C64>, grid: &PhaseGrid, shift: f64) -> Array1<C64> {
    let n = v.len();
    let mut buf = v.to_vec();
    fft_in_place(&mut buf);
    for (b, c) in buf.iter_mut().enumerate() {
        let p = signed_freq(b, n) as f64 * grid.dp();
        *c *= C64::from_polar(1.0, -p * shift / grid.hbar());
    }
    ifft_in_place(&mut buf);
    Array1::from(buf)
}

/// Translation by `shift` as a matrix.
pub fn translation_operator(grid: &PhaseGrid, shift: f64) -> Result<OperatorMatrix> {
    let n = grid.dim();
    let mut m = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::zeros(n);
        e[j] = C64::new(1.0, 0.0);
        m.column_mut(j).assign(&translate(&e, grid, shift));
    }
    OperatorMatrix::new(m)
}

/// Pointer (x) observed system under `H = g A (x) p_pointer`, with pointer-band regions.
pub struct MeasurementSystem {
    pointer: Partition,
    observed: PhaseGrid,
    basis: Vec<Array1<C64>>,
    eigenvalues: Vec<f64>,
    coupling: f64,
    duration: f64,
    effects: Vec<OperatorMatrix>,
    roots: Vec<OperatorMatrix>,
    ready: usize,
    outcomes: Vec<usize>,
    ready_state: WaveFunction,
}

impl MeasurementSystem {
    /// `pointer_x` is the centre of the ready pointer; outcome `j` moves it by `eigenvalues[j] * coupling * duration`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pointer: Partition,
        observed: PhaseGrid,
        eigenvalues: Vec<f64>,
        coupling: f64,
        duration: f64,
        pointer_x: f64,
        rule: UpdateRule,
    ) -> Result<Self> {
        let grid = *pointer.grid();
        if grid.dof() != 1 || observed.dof() != 1 {
            return Err(Error::InvalidArgument("pointer and observed systems have one degree of freedom each".into()));
        }
        let h = OperatorMatrix::hermitian(crate::wigner::weyl_operator_from_symbol(&WeylSymbol::oscillator(&observed))?)?;
        let basis: Vec<Array1<C64>> = oracle::eigenstates(&h, &observed, eigenvalues.len())?
            .iter()
            .map(|w| w.unit_vector())
            .collect();
        let locate = |x: f64| {
            pointer.region_of(&[x], &[0.0]).ok_or_else(|| Error::InvalidArgument(format!("pointer position {x} is off the grid")))
        };
        let ready = locate(pointer_x)?;
        let outcomes: Vec<usize> = eigenvalues
            .iter()
            .map(|l| locate(pointer_x + l * coupling * duration))
            .collect::<Result<_>>()?;
        check_pointer_regions(&pointer, ready, &outcomes)?;
        let (effects, roots) = match rule {
            UpdateRule::Quasiprojector => {
                let roots = pointer.regions().iter().map(|r| r.sqrt().cloned()).collect::<Result<_>>()?;
                (pointer.operators(), roots)
            }
            UpdateRule::Projector => {
                let p = classicality_projectors(&pointer)?.projectors;
                (p.clone(), p)
            }
        };
        let ready_state = coherent_state(&[pointer_x], &[0.0], &grid)?;
        Ok(Self {
            pointer,
            observed,
            basis,
            eigenvalues,
            coupling,
            duration,
            effects,
            roots,
            ready,
            outcomes,
            ready_state,
        })
    }

    pub fn pointer(&self) -> &Partition {
        &self.pointer
    }

    pub fn ready_region(&self) -> usize {
        self.ready
    }

    /// Region index reached by each eigenvalue.
    pub fn outcome_regions(&self) -> &[usize] {
        &self.outcomes
    }

    fn dims(&self) -> (usize, usize) {
        (self.pointer.grid().dim(), self.observed.dim())
    }

    fn matrix(&self, v: &Array1<C64>) -> Result<Array2<C64>> {
        let (np, no) = self.dims();
        v.clone()
            .into_shape_with_order((np, no))
            .map_err(|_| Error::DimensionMismatch { expected: np * no, got: v.len() })
    }

    /// `sum_j c_j |j>`, normalized.
    fn observed_vector(&self, amplitudes: &[f64]) -> Result<Array1<C64>> {
        if amplitudes.len() != self.basis.len() {
            return Err(Error::DimensionMismatch { expected: self.basis.len(), got: amplitudes.len() });
        }
        let mut o = Array1::<C64>::zeros(self.observed.dim());
        for (k, c) in self.basis.iter().zip(amplitudes) {
            o = o + k.mapv(|v| v * *c);
        }
        let norm = linalg::vec_norm(&o);
        if norm == 0.0 {
            return Err(Error::InvalidArgument("observed amplitudes vanish".into()));
        }
        Ok(o.mapv(|c| c / norm))
    }

    /// `|ready> (x) sum_j c_j |j>`, normalized.
    pub fn initial_state(&self, amplitudes: &[f64]) -> Result<Array1<C64>> {
        let o = self.observed_vector(amplitudes)?;
        let r = self.ready_state.unit_vector();
        Ok(Array1::from_shape_fn(r.len() * o.len(), |i| r[i / o.len()] * o[i % o.len()]))
    }

    /// Born weights of each outcome region after the full coupling, from the dense oracle.
    pub fn oracle_outcome_probabilities(&self, amplitudes: &[f64]) -> Result<Vec<f64>> {
        let grid = *self.pointer.grid();
        let observed = WaveFunction::from_unit_vector(&self.observed, self.observed_vector(amplitudes)?)?;
        let basis: Vec<WaveFunction> =
            self.basis.iter().map(|k| WaveFunction::from_unit_vector(&self.observed, k.clone())).collect::<Result<_>>()?;
        let coupling: Vec<OperatorMatrix> = self
            .eigenvalues
            .iter()
            .map(|l| translation_operator(&grid, l * self.coupling * self.duration))
            .collect::<Result<_>>()?;
        let state: CompositeState = measurement_premeasurement(&self.ready_state, &observed, &basis, &coupling)?;
        let rho: DensityOperator = state.pointer_state()?;
        let p = born_probabilities(&rho, &self.pointer.operators());
        Ok(self.outcomes.iter().map(|&r| p[r]).collect())
    }

    /// Reduced pointer state of a flattened composite vector.
    pub fn pointer_wigner(&self, v: &Array1<C64>) -> Result<WignerState> {
        let m = self.matrix(v)?;
        let rho = DensityOperator::unchecked(self.pointer.grid(), m.dot(&linalg::adjoint(&m)))?;
        wigner_from_density(&rho)
    }
}

fn check_pointer_regions(pointer: &Partition, ready: usize, outcomes: &[usize]) -> Result<()> {
    let min = 5.0 * pointer.grid().hbar().sqrt();
    let label = |i: usize| pointer.regions()[i].label().to_string();
    for (a, &ra) in outcomes.iter().enumerate() {
        if ra == ready {
            return Err(Error::InvalidArgument(format!(
                "outcome {a} leaves the pointer in the ready region '{}'",
                label(ra)
            )));
        }
        for &rb in &outcomes[..a] {
            let (ia, ib) = (&pointer.regions()[ra].intervals()[0], &pointer.regions()[rb].intervals()[0]);
            let gap = (ia.lower - ib.upper).max(ib.lower - ia.upper);
            if ra == rb || !(gap > min) {
                return Err(Error::InvalidArgument(format!(
                    "pointer regions '{}' and '{}' are separated by {:.4}, need more than 5*sqrt(hbar) = {min:.4}",
                    label(ra),
                    label(rb),
                    gap.max(0.0)
                )));
            }
        }
    }
    Ok(())
}

impl TrajectorySystem for MeasurementSystem {
    fn labels(&self) -> Vec<String> {
        self.pointer.labels()
    }

    fn evolve(&self, state: &Array1<C64>, t0: f64, duration: f64) -> Result<Array1<C64>> {
        let on = (t0 + duration).min(self.duration) - t0.min(self.duration);
        if on <= 0.0 {
            return Ok(state.clone());
        }
        let grid = *self.pointer.grid();
        let mut m = self.matrix(state)?;
        for (k, l) in self.basis.iter().zip(&self.eigenvalues) {
            // component of each pointer row along |k>
            let c: Array1<C64> = m.dot(&k.mapv(|v| v.conj()));
            let moved = translate(&c, &grid, l * self.coupling * on);
            for i in 0..m.nrows() {
                let d = moved[i] - c[i];
                for j in 0..m.ncols() {
                    m[[i, j]] += d * k[j];
                }
            }
        }
        Ok(m.into_shape_with_order(state.len()).expect("flatten"))
    }

    fn probabilities(&self, state: &Array1<C64>) -> Result<Vec<f64>> {
        let m = self.matrix(state)?;
        Ok(self
            .effects
            .iter()
            .map(|e| {
                let pm = e.matrix().dot(&m);
                m.iter().zip(pm.iter()).map(|(a, b)| (a.conj() * b).re).sum()
            })
            .collect())
    }

    fn project(&self, state: &Array1<C64>, region: usize) -> Result<Array1<C64>> {
        let m = self.matrix(state)?;
        let out = self.roots[region].matrix().dot(&m);
        let norm = out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm * norm < 1e-12 {
            return Err(Error::ForbiddenTransition {
                region: self.pointer.regions()[region].label().to_string(),
                probability: norm * norm,
            });
        }
        Ok(out.mapv(|c| c / norm).into_shape_with_order(state.len()).expect("flatten"))
    }

    fn restriction_residual(&self, state: &Array1<C64>, region: usize) -> Result<f64> {
        range_residual(self.pointer.regions()[region].operator(), &self.matrix(state)?)
    }
}

/// A system built from a config, with its initial state.
pub enum ScenarioSystem {
    Phase(crate::transition::PhaseSpaceSystem),
    Measurement(MeasurementSystem),
}

impl ScenarioSystem {
    pub fn as_dyn(&self) -> &dyn TrajectorySystem {
        match self {
            Self::Phase(s) => s,
            Self::Measurement(s) => s,
        }
    }
}

pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: ScenarioSystem,
    pub psi0: Array1<C64>,
    /// `|c_j|^2` per outcome region, for the measurement scenario.
    pub expected: Option<Vec<(String, f64)>>,
}

fn initial_wavefunction(cfg: &ScenarioConfig, grid: &PhaseGrid, h: &OperatorMatrix) -> Result<WaveFunction> {
    match &cfg.initial_state {
        StateConfig::Coherent { x, p } => coherent_state(x, p, grid),
        StateConfig::Cat { left, right, amplitudes } => {
            let zero = vec![0.0; grid.dof()];
            let l = coherent_state(left, &zero, grid)?.unit_vector();
            let r = coherent_state(right, &zero, grid)?.unit_vector();
            WaveFunction::from_unit_vector(grid, l.mapv(|c| c * amplitudes[0]) + r.mapv(|c| c * amplitudes[1]))?.normalized()
        }
        StateConfig::WellLocalized { side } => well_localized_state(h, grid, side == "left"),
        StateConfig::Eigenstate { index } => Ok(oracle::eigenstates(h, grid, index + 1)?.swap_remove(*index)),
        StateConfig::MeasurementInput { .. } => {
            Err(Error::InvalidArgument("measurement-input needs the coupling preset".into()))
        }
    }
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        let problems = config.check();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let grid = config.grid.build()?;
        let partition = build_partition(&grid, &config.partition.box_spec())?;
        let rule = config.schedule.update;
        match (&config.hamiltonian, &config.initial_state) {
            (
                HamiltonianConfig::VonNeumannCoupling { coupling, duration, observed_points, eigenvalues },
                StateConfig::MeasurementInput { amplitudes, pointer_x },
            ) => {
                let observed = PhaseGrid::symmetric(1, *observed_points, grid.hbar())?;
                let sys = MeasurementSystem::new(
                    partition,
                    observed,
                    eigenvalues.clone(),
                    *coupling,
                    *duration,
                    *pointer_x,
                    rule,
                )?;
                let psi0 = sys.initial_state(amplitudes)?;
                let total: f64 = amplitudes.iter().map(|a| a * a).sum();
                let labels = sys.labels();
                let expected = sys
                    .outcome_regions()
                    .iter()
                    .zip(amplitudes)
                    .map(|(&r, a)| (labels[r].clone(), a * a / total))
                    .collect();
                Ok(Self {
                    config: config.clone(),
                    system: ScenarioSystem::Measurement(sys),
                    psi0,
                    expected: Some(expected),
                })
            }
            (h, _) => {
                let symbol = hamiltonian_symbol(h, &grid)?;
                let op = OperatorMatrix::hermitian(crate::wigner::weyl_operator_from_symbol(&symbol)?)?;
                let psi = initial_wavefunction(config, &grid, &op)?;
                let sys = crate::transition::PhaseSpaceSystem::new(
                    partition,
                    HamiltonianSymbol::new(symbol)?,
                    config.output.backend,
                    rule,
                )?;
                Ok(Self {
                    config: config.clone(),
                    system: ScenarioSystem::Phase(sys),
                    psi0: psi.unit_vector(),
                    expected: None,
                })
            }
        }
    }

    pub fn trajectory_options(&self) -> Result<TrajectoryOptions> {
        let s = &self.config.schedule;
        Ok(TrajectoryOptions {
            t_final: s.t_final,
            dt: s.dt,
            schedule: ProjectionSchedule::new(s.dt_proj, s.mode, s.dt)?,
            snapshot_stride: self.config.output.snapshot_stride,
        })
    }

    pub fn prepare(&self) -> Result<()> {
        if let ScenarioSystem::Phase(s) = &self.system {
            s.prepare()?;
        }
        Ok(())
    }

    pub fn ensemble(&self) -> Result<Vec<TrajectoryRecord>> {
        self.prepare()?;
        let e = &self.config.ensemble;
        run_ensemble(self.system.as_dyn(), &self.psi0, &self.trajectory_options()?, e.base_seed, e.num_seeds)
    }

    /// Zeno sweep from the initial state, first projected onto its own region.
    pub fn zeno(&self) -> Result<Option<ZenoReport>> {
        let Some(z) = &self.config.zeno else { return Ok(None) };
        self.prepare()?;
        let sys = self.system.as_dyn();
        let region = initial_region(sys, &self.psi0)?;
        let start = sys.project(&self.psi0, region)?;
        zeno_experiment(sys, &start, region, z.t_total, &z.dt_proj).map(Some)
    }

    /// Wigner function of a state vector of this scenario (reduced to the pointer when composite).
    pub fn wigner(&self, v: &Array1<C64>) -> Result<WignerState> {
        match &self.system {
            ScenarioSystem::Phase(s) => {
                let d = v.len();
                let rho = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j].conj());
                wigner_from_density(&DensityOperator::unchecked(s.partition().grid(), rho)?)
            }
            ScenarioSystem::Measurement(s) => s.pointer_wigner(v),
        }
    }

    pub fn probabilities(&self, v: &Array1<C64>) -> Result<Vec<f64>> {
        match &self.system {
            ScenarioSystem::Phase(s) => Ok(expectation_probabilities(v, &s.partition().operators())),
            ScenarioSystem::Measurement(s) => s.probabilities(v),
        }
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub snapshot_stride: Option<usize>,
    pub backend: Option<Backend>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = cfg.clone();
        if let Some(s) = self.seed {
            cfg.ensemble.base_seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.to_string_lossy().into_owned();
        }
        if let Some(k) = self.snapshot_stride {
            cfg.output.snapshot_stride = Some(k);
        }
        if let Some(b) = self.backend {
            if cfg.is_measurement() {
                warn!("--backend has no effect on the measurement scenario, whose coupling is integrated exactly");
            }
            cfg.output.backend = b;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    #[serde(flatten)]
    pub ensemble: EnsembleSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeno: Option<ZenoReport>,
}

/// Run a parsed config and write every output into its output directory.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunSummary> {
    let cfg = options.apply(config);
    let problems = cfg.check();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let scenario = Scenario::build(&cfg)?;
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)?;
    let backend = if cfg.is_measurement() { "exact".to_string() } else { cfg.output.backend.to_string() };
    io::write_json(&dir.join("metadata.json"), &io::RunMetadata::new(&cfg, cfg.ensemble.base_seed, backend)?)?;

    let w0 = scenario.wigner(&scenario.psi0)?;
    io::write_wigner(&dir.join("initial_wigner.bin"), &w0)?;
    io::write_marginals(&dir.join("initial_marginals.csv"), &w0)?;

    let zeno = scenario.zeno()?;
    if let Some(z) = &zeno {
        fs::write(dir.join("zeno.csv"), io::zeno_csv(z))?;
    }

    info!("running {} trajectories of '{}'", cfg.ensemble.num_seeds, cfg.name);
    let records = scenario.ensemble()?;
    let summary = EnsembleSummary::from_records(scenario.system.as_dyn().labels(), &records);
    io::write_summary(&dir.join("summary.csv"), &summary)?;
    for r in records.iter().take(cfg.output.trajectories) {
        write_record(&dir, &scenario, r)?;
    }
    let out = RunSummary { name: cfg.name.clone(), ensemble: summary, expected: scenario.expected.clone(), zeno };
    io::write_json(&dir.join("summary.json"), &out)?;
    Ok(out)
}

fn write_record(dir: &Path, scenario: &Scenario, r: &TrajectoryRecord) -> Result<()> {
    io::write_trajectory(&dir.join(format!("trajectory_{}.csv", r.seed)), r)?;
    if let Some((step, v)) = r.snapshots.last() {
        fs::write(dir.join(format!("snapshots_{}.csv", r.seed)), io::snapshots_csv(r))?;
        let w = scenario.wigner(v)?;
        io::write_wigner(&dir.join(format!("wigner_{}_step{step}.bin", r.seed)), &w)?;
        io::write_marginals(&dir.join(format!("marginals_{}_step{step}.csv", r.seed)), &w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::BoxSpec;
    use crate::config::parse_config_str;

    pub(crate) fn pointer_partition() -> Partition {
        let g = PhaseGrid::new(1, 64, 12.0, 1.0).unwrap();
        let spec = BoxSpec::new(vec![vec![-2.75, 2.75], vec![]])
            .with_labels(vec!["outcome-".into(), "ready".into(), "outcome+".into()]);
        build_partition(&g, &spec).unwrap()
    }

    fn measurement(rule: UpdateRule) -> MeasurementSystem {
        let obs = PhaseGrid::symmetric(1, 16, 1.0).unwrap();
        MeasurementSystem::new(pointer_partition(), obs, vec![-1.0, 1.0], 1.0, 6.0, 0.0, rule).unwrap()
    }

    #[test]
    fn translation_by_whole_cells_is_a_roll() {
        let g = PhaseGrid::new(1, 64, 12.0, 1.0).unwrap();
        let v = coherent_state(&[0.3], &[0.5], &g).unwrap().unit_vector();
        let t = translate(&v, &g, 5.0 * g.dx());
        for i in 5..64 {
            assert!((t[i] - v[i - 5]).norm() < 1e-12);
        }
        let back = translate(&translate(&v, &g, 1.37), &g, -1.37);
        assert!((&back - &v).iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn coupling_moves_the_pointer() {
        let sys = measurement(UpdateRule::Quasiprojector);
        assert_eq!(sys.outcome_regions(), &[0, 2]);
        let psi = sys.initial_state(&[0.6, 0.8]).unwrap();
        let p0 = sys.probabilities(&psi).unwrap();
        assert!(p0[1] > 0.99, "{p0:?}");
        let mut v = psi.clone();
        for k in 0..4 {
            v = sys.evolve(&v, 1.5 * k as f64, 1.5).unwrap();
        }
        let p = sys.probabilities(&v).unwrap();
        assert!((p[0] - 0.36).abs() < 2e-3 && (p[2] - 0.64).abs() < 2e-3, "{p:?}");
        let oracle = sys.oracle_outcome_probabilities(&[0.6, 0.8]).unwrap();
        assert!((oracle[0] - p[0]).abs() < 1e-10 && (oracle[1] - p[2]).abs() < 1e-10);
        // nothing happens after the coupling is switched off
        let later = sys.evolve(&v, 6.0, 3.0).unwrap();
        assert!((&later - &v).iter().all(|c| c.norm() < 1e-14));
        assert!(sys.restriction_residual(&psi, 1).unwrap() < 1e-3);
    }

    #[test]
    fn overlapping_pointer_regions_are_rejected() {
        let g = PhaseGrid::new(1, 64, 12.0, 1.0).unwrap();
        let obs = PhaseGrid::symmetric(1, 16, 1.0).unwrap();
        let part = build_partition(&g, &BoxSpec::new(vec![vec![-2.75, 2.75], vec![]])).unwrap();
        let err = MeasurementSystem::new(part, obs, vec![1.0, 1.5], 1.0, 6.0, 0.0, UpdateRule::Quasiprojector);
        assert!(matches!(err, Err(Error::InvalidArgument(m)) if m.contains("5*sqrt(hbar)")));
        let part = build_partition(&g, &BoxSpec::new(vec![vec![-2.75, 2.75], vec![]])).unwrap();
        let err = MeasurementSystem::new(part, obs, vec![-0.1, 1.0], 1.0, 6.0, 0.0, UpdateRule::Quasiprojector);
        assert!(matches!(err, Err(Error::InvalidArgument(m)) if m.contains("ready")));
    }

    #[test]
    fn eigenstate_input_always_gives_its_outcome() {
        let sys = measurement(UpdateRule::Quasiprojector);
        let psi = sys.initial_state(&[1.0, 0.0]).unwrap();
        let opts = TrajectoryOptions {
            t_final: 6.0,
            dt: 1.5,
            schedule: ProjectionSchedule::new(1.5, crate::transition::ScheduleMode::Periodic, 1.5).unwrap(),
            snapshot_stride: None,
        };
        let recs = run_ensemble(&sys, &psi, &opts, 0, 50).unwrap();
        let s = EnsembleSummary::from_records(sys.labels(), &recs);
        assert_eq!(s.counts, vec![50, 0, 0]);
        assert_eq!(s.restriction_failures, 0);
    }

    #[test]
    fn well_localized_doublet() {
        let g = PhaseGrid::new(1, 64, 4.0, 0.1).unwrap();
        let h = HamiltonianConfig::DoubleWell { mass: 1.0, v0: 0.15, b: 1.0 };
        let op = OperatorMatrix::hermitian(crate::wigner::weyl_operator_from_symbol(&hamiltonian_symbol(&h, &g).unwrap()).unwrap())
            .unwrap();
        let psi = well_localized_state(&op, &g, true).unwrap();
        let left: f64 = (0..64).filter(|&i| g.x_at(i) < 0.0).map(|i| psi.unit_vector()[i].norm_sqr()).sum();
        assert!(left > 0.99, "{left}");
    }

    #[test]
    fn run_writes_outputs() {
        let text = r#"{
            "name": "osc",
            "grid": {"points": 32, "hbar": 0.5, "x_extent": 6.0},
            "hamiltonian": {"preset": "oscillator"},
            "partition": {"x": [[0.0]], "p": [[]]},
            "initial_state": {"preset": "coherent", "x": [-2.0], "p": [0.0]},
            "schedule": {"dt": 0.25, "dt_proj": 0.5, "t_final": 1.0, "mode": "periodic"},
            "ensemble": {"num_seeds": 3, "base_seed": 5},
            "output": {"snapshot_stride": 2, "trajectories": 2}
        }"#;
        let cfg = parse_config_str(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let s = run_scenario(&cfg, &opts).unwrap();
        assert_eq!(s.ensemble.runs, 3);
        for f in [
            "metadata.json",
            "summary.csv",
            "summary.json",
            "initial_wigner.bin",
            "initial_marginals.csv",
            "trajectory_5.csv",
            "trajectory_6.csv",
            "snapshots_5.csv",
            "wigner_5_step4.bin",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(!dir.path().join("trajectory_7.csv").exists());
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["seed"], 5);
        assert_eq!(meta["config"]["ensemble"]["base_seed"], 5);
    }
}
