//! Region transitions: Born weights over a partition, seeded sampling,
//! quasiprojective state updates and trajectory stepping.

use log::warn;
use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use crate::coarse::{classicality_projectors, range_residual, ClassicalityProjectors, Partition, Region};
use crate::error::{Error, Result};
use crate::linalg::{self, Eigh};
use crate::moyal::{evolve_kernel, HamiltonianSymbol};
use crate::oracle::{sample_index, OperatorMatrix};
use crate::spectral::C64;
use crate::wigner::{wigner_from_density, DensityOperator, WaveFunction, WignerState};

const CLIP: f64 = 1e-8;
const SUM_TOL: f64 = 1e-6;
const FORBIDDEN: f64 = 1e-12;
/// Tolerance of the post-projection restriction check.
pub const RESTRICTION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Liouville-von Neumann evolution of the density kernel.
    Phase,
    /// Exact Schrödinger propagation.
    Oracle,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(Self::Phase),
            "oracle" => Ok(Self::Oracle),
            _ => Err(Error::InvalidArgument(format!("unknown backend {s:?}, expected phase or oracle"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Phase => "phase",
            Self::Oracle => "oracle",
        })
    }
}

/// Which effects drive sampling and the state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// `Pi_R^{1/2}` (POVM form).
    Quasiprojector,
    /// Exact classicality projectors.
    Projector,
}

#[derive(Debug, Clone)]
pub struct RegionDecomposition {
    pub coefficients: Vec<C64>,
    pub probabilities: Vec<f64>,
    pub residual: f64,
}

/// Clip tiny negatives, reject real ones, and check normalization.
pub fn checked_probabilities(raw: Vec<f64>) -> Result<Vec<f64>> {
    let mut out = raw;
    for (i, p) in out.iter_mut().enumerate() {
        if *p < 0.0 {
            if *p < -CLIP {
                return Err(Error::NotPositive { min_eigenvalue: *p });
            }
            warn!("probability of region {i} clipped from {p:.3e} to 0");
            *p = 0.0;
        }
    }
    let total: f64 = out.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateProbabilities);
    }
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("region probabilities sum to {total}, expected 1")));
    }
    Ok(out)
}

/// `p_j = sum_z Pi_j(z) W(z) dz`.
pub fn transition_probabilities(w: &WignerState, partition: &Partition) -> Result<Vec<f64>> {
    partition.grid().ensure_same(w.grid())?;
    let vol = w.grid().cell_volume();
    let raw = partition
        .regions()
        .iter()
        .map(|r| (&r.symbol_values() * w.values()).sum() * vol)
        .collect();
    checked_probabilities(raw)
}

/// `<v| E_j |v>` for each effect.
pub fn expectation_probabilities(v: &Array1<C64>, effects: &[OperatorMatrix]) -> Vec<f64> {
    effects.iter().map(|e| linalg::inner(v, &e.apply(v)).re).collect()
}

/// Amplitudes `c_j = ||P_j psi||` along the branch states `P_j psi / ||P_j psi||`.
pub fn decompose_over_regions(
    psi: &WaveFunction,
    partition: &Partition,
    projectors: &ClassicalityProjectors,
) -> Result<RegionDecomposition> {
    partition.grid().ensure_same(psi.grid())?;
    let v = psi.unit_vector();
    let mut sum = Array1::<C64>::zeros(v.len());
    let mut coefficients = Vec::with_capacity(partition.len());
    for p in &projectors.projectors {
        let branch = p.apply(&v);
        let c = linalg::vec_norm(&branch);
        coefficients.push(C64::new(c, 0.0));
        sum = sum + branch;
    }
    let residual = linalg::vec_norm(&(&v - &sum));
    let w = wigner_from_density(&psi.density_operator())?;
    Ok(RegionDecomposition {
        coefficients,
        probabilities: transition_probabilities(&w, partition)?,
        residual,
    })
}

/// Uniform draw in `[0, 1)` fixed by `(seed, step)`.
pub fn uniform_draw(seed: u64, step: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(step);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF choice of a region for step `step` of the trajectory with `seed`.
pub fn sample_transition(probabilities: &[f64], seed: u64, step: u64) -> Result<usize> {
    sample_index(probabilities, uniform_draw(seed, step))
}

fn project_vector(v: &Array1<C64>, effect: &OperatorMatrix, root: &OperatorMatrix, label: &str) -> Result<Array1<C64>> {
    let p = linalg::inner(v, &effect.apply(v)).re;
    if p < FORBIDDEN {
        return Err(Error::ForbiddenTransition {
            region: label.to_string(),
            probability: p,
        });
    }
    let out = root.apply(v);
    let n = linalg::vec_norm(&out);
    Ok(out.mapv(|c| c / n))
}

/// `Pi_R^{1/2} psi`, renormalized.
pub fn apply_quasiprojection(psi: &WaveFunction, region: &Region) -> Result<WaveFunction> {
    let v = project_vector(&psi.unit_vector(), region.operator(), region.sqrt()?, region.label())?;
    WaveFunction::from_unit_vector(psi.grid(), v)
}

/// `P psi`, renormalized, for an exact projector.
pub fn apply_projector(psi: &WaveFunction, projector: &OperatorMatrix, label: &str) -> Result<WaveFunction> {
    let v = project_vector(&psi.unit_vector(), projector, projector, label)?;
    WaveFunction::from_unit_vector(psi.grid(), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Continuous,
    Periodic,
    SingleShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSchedule {
    pub dt_proj: f64,
    pub mode: ScheduleMode,
}

impl ProjectionSchedule {
    pub fn new(dt_proj: f64, mode: ScheduleMode, dt: f64) -> Result<Self> {
        let s = Self { dt_proj, mode };
        s.validate(dt)?;
        Ok(s)
    }

    pub fn continuous(dt: f64) -> Self {
        Self { dt_proj: dt, mode: ScheduleMode::Continuous }
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(self.dt_proj >= dt * (1.0 - 1e-9)) || !self.dt_proj.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt_proj = {} must be at least the dynamics step dt = {dt}",
                self.dt_proj
            )));
        }
        Ok(())
    }

    /// Whether a projection follows dynamics step `step` (1-based) of `total`.
    pub fn fires(&self, step: usize, total: usize, dt: f64) -> bool {
        match self.mode {
            ScheduleMode::Continuous => true,
            ScheduleMode::SingleShot => step == total,
            ScheduleMode::Periodic => {
                let every = (self.dt_proj / dt).round().max(1.0) as usize;
                step % every == 0 || step == total
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepEvent {
    None,
    Projection,
    Transition,
}

impl StepEvent {
    pub fn code(self) -> u8 {
        match self {
            Self::None => 0,
            Self::Projection => 1,
            Self::Transition => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub time: f64,
    pub region: usize,
    /// Region weights of the evolved state, before any projection at this step.
    pub probabilities: Vec<f64>,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEvent {
    pub step: usize,
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub labels: Vec<String>,
    pub steps: Vec<TrajectoryStep>,
    pub snapshots: Vec<(usize, Array1<C64>)>,
    pub events: Vec<TransitionEvent>,
    pub projections: usize,
    pub restriction_failures: usize,
    pub max_restriction_residual: f64,
}

impl TrajectoryRecord {
    pub fn initial_region(&self) -> usize {
        self.steps.first().map(|s| s.region).unwrap_or(0)
    }

    pub fn final_region(&self) -> usize {
        self.steps.last().map(|s| s.region).unwrap_or(0)
    }
}

/// A pure-state system with a region partition.
pub trait TrajectorySystem: Sync {
    fn labels(&self) -> Vec<String>;
    /// Evolve a unit vector from `t0` for `duration`.
    fn evolve(&self, state: &Array1<C64>, t0: f64, duration: f64) -> Result<Array1<C64>>;
    /// Weights of the effects used for sampling.
    fn probabilities(&self, state: &Array1<C64>) -> Result<Vec<f64>>;
    /// Post-selection state for `region`, renormalized.
    fn project(&self, state: &Array1<C64>, region: usize) -> Result<Array1<C64>>;
    /// Distance of `state` from the range of `Pi_region^{1/2}`.
    fn restriction_residual(&self, state: &Array1<C64>, region: usize) -> Result<f64>;
}

/// Options of a single trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOptions {
    pub t_final: f64,
    pub dt: f64,
    pub schedule: ProjectionSchedule,
    /// Keep the state every `k` steps.
    pub snapshot_stride: Option<usize>,
}

fn step_count(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_final >= 0.0) || !t_final.is_finite() || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need t_final >= 0 and dt > 0, got {t_final} and {dt}")));
    }
    let n = (t_final / dt).round() as usize;
    if n == 0 {
        return Ok((0, dt));
    }
    Ok((n, t_final / n as f64))
}

/// Region containing the initial state, checked for quasirestriction.
pub fn initial_region<S: TrajectorySystem + ?Sized>(system: &S, psi0: &Array1<C64>) -> Result<usize> {
    let p = checked_probabilities(system.probabilities(psi0)?)?;
    let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    let residual = system.restriction_residual(psi0, best)?;
    if residual >= RESTRICTION_TOL {
        return Err(Error::NotQuasirestricted { residual });
    }
    Ok(best)
}

/// Evolve, then project on schedule; deterministic in `seed`.
pub fn run_trajectory<S: TrajectorySystem + ?Sized>(
    system: &S,
    psi0: &Array1<C64>,
    options: &TrajectoryOptions,
    seed: u64,
) -> Result<TrajectoryRecord> {
    options.schedule.validate(options.dt)?;
    let (n, step) = step_count(options.t_final, options.dt)?;
    let norm = linalg::vec_norm(psi0);
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("initial state has norm {norm}, expected 1")));
    }
    let mut current = initial_region(system, psi0)?;
    let mut record = TrajectoryRecord {
        seed,
        labels: system.labels(),
        steps: Vec::with_capacity(n + 1),
        snapshots: Vec::new(),
        events: Vec::new(),
        projections: 0,
        restriction_failures: 0,
        max_restriction_residual: 0.0,
    };
    let mut v = psi0.clone();
    record.steps.push(TrajectoryStep {
        step: 0,
        time: 0.0,
        region: current,
        probabilities: checked_probabilities(system.probabilities(&v)?)?,
        event: StepEvent::None,
    });
    if options.snapshot_stride.is_some() {
        record.snapshots.push((0, v.clone()));
    }
    for s in 1..=n {
        let t0 = (s - 1) as f64 * step;
        v = system.evolve(&v, t0, step)?;
        let probs = checked_probabilities(system.probabilities(&v)?)?;
        let mut event = StepEvent::None;
        if options.schedule.fires(s, n, step) {
            let k = sample_transition(&probs, seed, s as u64)?;
            v = system.project(&v, k)?;
            let residual = system.restriction_residual(&v, k)?;
            record.projections += 1;
            record.max_restriction_residual = record.max_restriction_residual.max(residual);
            if residual >= RESTRICTION_TOL {
                record.restriction_failures += 1;
            }
            if k != current {
                record.events.push(TransitionEvent {
                    step: s,
                    time: s as f64 * step,
                    from: current,
                    to: k,
                    probability: probs[k],
                });
                event = StepEvent::Transition;
                current = k;
            } else {
                event = StepEvent::Projection;
            }
        }
        record.steps.push(TrajectoryStep {
            step: s,
            time: s as f64 * step,
            region: current,
            probabilities: probs,
            event,
        });
        if let Some(k) = options.snapshot_stride {
            if k > 0 && s % k == 0 {
                record.snapshots.push((s, v.clone()));
            }
        }
    }
    Ok(record)
}

/// Worker pool bounded by `OSQM_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("OSQM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("OSQM_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Final-region statistics of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub labels: Vec<String>,
    pub runs: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    /// 95 % Wilson score intervals.
    pub intervals: Vec<(f64, f64)>,
    pub projections: usize,
    pub restriction_failures: usize,
    pub transitions: usize,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl EnsembleSummary {
    pub fn from_records(labels: Vec<String>, records: &[TrajectoryRecord]) -> Self {
        let mut counts = vec![0; labels.len()];
        for r in records {
            counts[r.final_region()] += 1;
        }
        let runs = records.len();
        Self {
            frequencies: counts.iter().map(|&c| c as f64 / runs.max(1) as f64).collect(),
            intervals: counts.iter().map(|&c| wilson_interval(c, runs, 1.96)).collect(),
            counts,
            labels,
            runs,
            projections: records.iter().map(|r| r.projections).sum(),
            restriction_failures: records.iter().map(|r| r.restriction_failures).sum(),
            transitions: records.iter().map(|r| r.events.len()).sum(),
        }
    }
}

/// Run seeds `base_seed .. base_seed + runs` in parallel; records come back in seed order.
pub fn run_ensemble<S: TrajectorySystem + ?Sized>(
    system: &S,
    psi0: &Array1<C64>,
    options: &TrajectoryOptions,
    base_seed: u64,
    runs: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let pool = worker_pool()?;
    pool.install(|| {
        (0..runs as u64)
            .into_par_iter()
            .map(|i| run_trajectory(system, psi0, options, base_seed.wrapping_add(i)))
            .collect()
    })
}

/// One row of a Zeno sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoRow {
    pub dt_proj: f64,
    pub intervals: usize,
    /// Mean per-interval probability of leaving the region, along the surviving branch.
    pub misprojection: f64,
    /// Same, minus the weight outside the region before each interval.
    pub excess: f64,
    pub survival: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoReport {
    pub rows: Vec<ZenoRow>,
    pub unmonitored_survival: f64,
    /// Log-log slope of `excess` against `dt_proj` over unsaturated rows.
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Leakage above this per-interval probability marks a row as saturated.
pub const ZENO_SATURATION: f64 = 0.05;

/// Repeated projection onto `region` every `dt_proj`, following the surviving branch.
pub fn zeno_experiment<S: TrajectorySystem + ?Sized>(
    system: &S,
    psi0: &Array1<C64>,
    region: usize,
    t_total: f64,
    dt_projs: &[f64],
) -> Result<ZenoReport> {
    let rows: Vec<ZenoRow> = dt_projs
        .par_iter()
        .map(|&dt_proj| {
            let (n, step) = step_count(t_total, dt_proj)?;
            let mut v = psi0.clone();
            let mut survival = 1.0;
            let (mut mis_sum, mut excess_sum) = (0.0, 0.0);
            for i in 0..n {
                let before = 1.0 - system.probabilities(&v)?[region];
                v = system.evolve(&v, i as f64 * step, step)?;
                let mis = 1.0 - system.probabilities(&v)?[region];
                mis_sum += mis;
                excess_sum += mis - before;
                survival *= 1.0 - mis;
                v = system.project(&v, region)?;
            }
            let misprojection = mis_sum / n.max(1) as f64;
            let excess = excess_sum / n.max(1) as f64;
            Ok(ZenoRow {
                dt_proj: step,
                intervals: n,
                misprojection,
                excess,
                survival,
                saturated: misprojection > ZENO_SATURATION || excess <= 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let end = system.evolve(psi0, 0.0, t_total)?;
    let unmonitored_survival = system.probabilities(&end)?[region];
    let fit: Vec<(f64, f64)> = rows.iter().filter(|r| !r.saturated).map(|r| (r.dt_proj, r.excess)).collect();
    Ok(ZenoReport {
        slope: loglog_slope(&fit),
        rows,
        unmonitored_survival,
    })
}

/// One grid, one Hamiltonian and one partition.
pub struct PhaseSpaceSystem {
    partition: Partition,
    hamiltonian: HamiltonianSymbol,
    backend: Backend,
    rule: UpdateRule,
    operator: Option<OperatorMatrix>,
    projectors: OnceLock<ClassicalityProjectors>,
    propagators: Mutex<HashMap<u64, Arc<Array2<C64>>>>,
}

impl PhaseSpaceSystem {
    pub fn new(partition: Partition, hamiltonian: HamiltonianSymbol, backend: Backend, rule: UpdateRule) -> Result<Self> {
        partition.grid().ensure_same(hamiltonian.grid())?;
        let operator = if hamiltonian.is_static() {
            Some(OperatorMatrix::hermitian(hamiltonian.kernel_at(0.0))?)
        } else {
            None
        };
        Ok(Self {
            partition,
            hamiltonian,
            backend,
            rule,
            operator,
            projectors: OnceLock::new(),
            propagators: Mutex::new(HashMap::new()),
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn hamiltonian(&self) -> &HamiltonianSymbol {
        &self.hamiltonian
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn projectors(&self) -> Result<&ClassicalityProjectors> {
        if let Some(p) = self.projectors.get() {
            return Ok(p);
        }
        let p = classicality_projectors(&self.partition)?;
        Ok(self.projectors.get_or_init(|| p))
    }

    /// Build the sampling effects and square roots up front so worker threads only read.
    pub fn prepare(&self) -> Result<()> {
        match self.rule {
            UpdateRule::Projector => {
                self.projectors()?;
            }
            UpdateRule::Quasiprojector => {
                self.partition.regions().par_iter().try_for_each(|r| r.sqrt().map(|_| ()))?;
            }
        }
        for r in self.partition.regions() {
            r.operator().eigen()?;
        }
        Ok(())
    }

    fn propagator(&self, op: &OperatorMatrix, dt: f64) -> Result<Arc<Array2<C64>>> {
        let key = dt.to_bits();
        if let Some(u) = self.propagators.lock().expect("propagator cache").get(&key) {
            return Ok(u.clone());
        }
        let u = Arc::new(op.propagator(dt, self.partition.grid().hbar())?);
        self.propagators.lock().expect("propagator cache").insert(key, u.clone());
        Ok(u)
    }

    fn evolve_oracle(&self, v: &Array1<C64>, t0: f64, duration: f64) -> Result<Array1<C64>> {
        match &self.operator {
            Some(op) => Ok(self.propagator(op, duration)?.dot(v)),
            None => {
                let psi = WaveFunction::from_unit_vector(self.partition.grid(), v.clone())?;
                let dt = self.hamiltonian.stable_dt().min(duration.max(f64::MIN_POSITIVE));
                let out = crate::oracle::schrodinger_propagate_keyframed(&psi, &self.hamiltonian, t0, duration, dt)?;
                Ok(out.unit_vector())
            }
        }
    }

    fn evolve_phase(&self, v: &Array1<C64>, t0: f64, duration: f64) -> Result<Array1<C64>> {
        let d = v.len();
        let rho = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j].conj());
        let dt = (0.5 * self.hamiltonian.stable_dt()).min(duration.max(f64::MIN_POSITIVE));
        let out = evolve_kernel(&rho, &self.hamiltonian, t0, duration, dt)?;
        // the evolved kernel stays rank one; take its leading eigenvector
        let e = Eigh::new(&out)?;
        let mut w = e.vectors.column(d - 1).to_owned();
        let ov = linalg::inner(&w, v);
        if ov.norm() > 0.0 {
            let phase = ov / ov.norm();
            w.mapv_inplace(|c| c * phase);
        }
        let n = linalg::vec_norm(&w);
        Ok(w.mapv(|c| c / n))
    }
}

impl TrajectorySystem for PhaseSpaceSystem {
    fn labels(&self) -> Vec<String> {
        self.partition.labels()
    }

    fn evolve(&self, state: &Array1<C64>, t0: f64, duration: f64) -> Result<Array1<C64>> {
        if duration == 0.0 {
            return Ok(state.clone());
        }
        match self.backend {
            Backend::Oracle => self.evolve_oracle(state, t0, duration),
            Backend::Phase => self.evolve_phase(state, t0, duration),
        }
    }

    fn probabilities(&self, state: &Array1<C64>) -> Result<Vec<f64>> {
        match (self.rule, self.backend) {
            (UpdateRule::Projector, _) => Ok(expectation_probabilities(state, &self.projectors()?.projectors)),
            (UpdateRule::Quasiprojector, Backend::Oracle) => {
                Ok(expectation_probabilities(state, &self.partition.operators()))
            }
            (UpdateRule::Quasiprojector, Backend::Phase) => {
                let d = state.len();
                let rho = Array2::from_shape_fn((d, d), |(i, j)| state[i] * state[j].conj());
                let w = wigner_from_density(&DensityOperator::unchecked(self.partition.grid(), rho)?)?;
                transition_probabilities(&w, &self.partition)
            }
        }
    }

    fn project(&self, state: &Array1<C64>, region: usize) -> Result<Array1<C64>> {
        let r = &self.partition.regions()[region];
        match self.rule {
            UpdateRule::Quasiprojector => project_vector(state, r.operator(), r.sqrt()?, r.label()),
            UpdateRule::Projector => {
                let p = &self.projectors()?.projectors[region];
                project_vector(state, p, p, r.label())
            }
        }
    }

    fn restriction_residual(&self, state: &Array1<C64>, region: usize) -> Result<f64> {
        let n = state.len();
        let col = state.clone().into_shape_with_order((n, 1)).expect("column");
        range_residual(self.partition.regions()[region].operator(), &col)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::{build_partition, is_quasirestricted, quasiprojector_defect, BoxSpec};
    use crate::wigner::{coherent_state, WeylSymbol};

    fn half_planes() -> Partition {
        let g = crate::PhaseGrid::symmetric(1, 256, 1.0 / 16.0).unwrap();
        build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap()
    }

    fn cat(g: &crate::PhaseGrid, a: f64, b: f64) -> WaveFunction {
        let l = coherent_state(&[-2.5], &[0.0], g).unwrap().unit_vector();
        let r = coherent_state(&[2.5], &[0.0], g).unwrap().unit_vector();
        WaveFunction::from_unit_vector(g, l.mapv(|c| c * a) + r.mapv(|c| c * b)).unwrap().normalized().unwrap()
    }

    #[test]
    fn symbol_and_trace_forms_agree() {
        let part = half_planes();
        let g = *part.grid();
        for (a, b, pl) in [(1.0, 1.0, 0.5), (0.6, 0.8, 0.36)] {
            let psi = cat(&g, a, b);
            let w = wigner_from_density(&psi.density_operator()).unwrap();
            let p = transition_probabilities(&w, &part).unwrap();
            let q = expectation_probabilities(&psi.unit_vector(), &part.operators());
            for (x, y) in p.iter().zip(&q) {
                assert!((x - y).abs() < 1e-8);
            }
            assert!((p[0] - pl).abs() < 1e-3 && (p[1] - (1.0 - pl)).abs() < 1e-3, "{p:?}");
        }
        let whole = build_partition(&g, &BoxSpec::whole(1)).unwrap();
        let w = wigner_from_density(&cat(&g, 1.0, 1.0).density_operator()).unwrap();
        assert!((transition_probabilities(&w, &whole).unwrap()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn decomposition_of_localized_state() {
        let part = half_planes();
        let proj = classicality_projectors(&part).unwrap();
        let psi = coherent_state(&[-2.5], &[0.3], part.grid()).unwrap();
        let d = decompose_over_regions(&psi, &part, &proj).unwrap();
        assert!((d.coefficients[0].norm() - 1.0).abs() < 1e-6, "{:?}", d.coefficients);
        assert!(d.coefficients[1].norm() < 1e-6, "{:?}", d.coefficients);
        assert!(d.residual < 1e-10);
        let d = decompose_over_regions(&cat(part.grid(), 0.6, 0.8), &part, &proj).unwrap();
        assert!((d.coefficients[0].norm_sqr() - 0.36).abs() < 1e-3);
        assert!((d.probabilities[1] - 0.64).abs() < 1e-3);
    }

    #[test]
    fn sampling_statistics() {
        assert_eq!(sample_transition(&[1.0, 0.0], 7, 3).unwrap(), 0);
        assert!(matches!(sample_transition(&[0.0, 0.0], 7, 3), Err(Error::DegenerateProbabilities)));
        for p in [0.5, 0.36] {
            let hits = (0..10_000u64).filter(|&s| sample_transition(&[p, 1.0 - p], 11, s).unwrap() == 0).count();
            let f = hits as f64 / 1e4;
            assert!((f - p).abs() < 0.015, "{f}");
        }
        assert_eq!(uniform_draw(3, 9), uniform_draw(3, 9));
        assert_ne!(uniform_draw(3, 9), uniform_draw(3, 10));
        assert_ne!(uniform_draw(3, 9), uniform_draw(4, 9));
    }

    #[test]
    fn quasiprojection_updates() {
        let part = half_planes();
        let g = *part.grid();
        let left = &part.regions()[0];
        let inside = coherent_state(&[-2.5], &[0.0], &g).unwrap();
        let out = apply_quasiprojection(&inside, left).unwrap();
        assert!(out.inner(&inside).unwrap().norm_sqr() > 1.0 - 1e-4);

        let psi = cat(&g, 1.0, 1.0);
        let post = apply_quasiprojection(&psi, left).unwrap();
        assert!(is_quasirestricted(&post, left, 1e-3).unwrap().restricted);
        let right_branch = coherent_state(&[2.5], &[0.0], &g).unwrap();
        assert!(post.inner(&right_branch).unwrap().norm() < 1e-3);

        let proj = classicality_projectors(&part).unwrap();
        let sharp = apply_projector(&psi, &proj.projectors[0], "R0").unwrap();
        let diff = linalg::vec_norm(&(sharp.unit_vector() - post.unit_vector()));
        assert!(diff < 3.0 * quasiprojector_defect(&part).defect, "{diff}");

        let far = coherent_state(&[2.5], &[0.0], &g).unwrap();
        assert!(matches!(apply_quasiprojection(&far, left), Err(Error::ForbiddenTransition { .. })));
    }

    fn small_system(h: WeylSymbol, backend: Backend, rule: UpdateRule) -> PhaseSpaceSystem {
        let g = *h.grid();
        let part = build_partition(&g, &BoxSpec::half_planes(1, 0.0)).unwrap();
        PhaseSpaceSystem::new(part, HamiltonianSymbol::new(h).unwrap(), backend, rule).unwrap()
    }

    #[test]
    fn frozen_without_dynamics() {
        let g = crate::PhaseGrid::new(1, 64, 8.0, 0.25).unwrap();
        let sys = small_system(WeylSymbol::constant(&g, 0.0), Backend::Oracle, UpdateRule::Quasiprojector);
        let psi = coherent_state(&[-4.0], &[0.0], &g).unwrap().unit_vector();
        for schedule in [ProjectionSchedule::continuous(0.1), ProjectionSchedule { dt_proj: 0.5, mode: ScheduleMode::Periodic }] {
            let opts = TrajectoryOptions { t_final: 2.0, dt: 0.1, schedule, snapshot_stride: Some(5) };
            let rec = run_trajectory(&sys, &psi, &opts, 5).unwrap();
            assert!(rec.steps.iter().all(|s| s.region == 0));
            assert!(rec.steps.iter().all(|s| (s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6));
            assert_eq!(rec.restriction_failures, 0);
            assert_eq!(rec.snapshots.len(), 5);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let g = crate::PhaseGrid::new(1, 64, 8.0, 0.25).unwrap();
        let sys = small_system(WeylSymbol::from_fn(&g, |_, p| 0.5 * p[0] * p[0]), Backend::Oracle, UpdateRule::Quasiprojector);
        let psi = coherent_state(&[-1.5], &[0.8], &g).unwrap().unit_vector();
        let opts = TrajectoryOptions { t_final: 2.0, dt: 0.1, schedule: ProjectionSchedule::continuous(0.1), snapshot_stride: None };
        let a = run_trajectory(&sys, &psi, &opts, 42).unwrap();
        let b = run_trajectory(&sys, &psi, &opts, 42).unwrap();
        assert_eq!(a, b);
        let ens = run_ensemble(&sys, &psi, &opts, 100, 16).unwrap();
        assert_eq!(ens[3], run_trajectory(&sys, &psi, &opts, 103).unwrap());
    }

    #[test]
    fn phase_backend_tracks_oracle() {
        let g = crate::PhaseGrid::new(1, 64, 8.0, 0.25).unwrap();
        let h = WeylSymbol::from_fn(&g, |x, p| 0.5 * (p[0] * p[0] + x[0] * x[0]));
        let a = small_system(h.clone(), Backend::Oracle, UpdateRule::Quasiprojector);
        let b = small_system(h, Backend::Phase, UpdateRule::Quasiprojector);
        let psi = coherent_state(&[-1.0], &[0.5], &g).unwrap().unit_vector();
        let va = a.evolve(&psi, 0.0, 0.5).unwrap();
        let vb = b.evolve(&psi, 0.0, 0.5).unwrap();
        assert!(linalg::inner(&va, &vb).norm_sqr() > 1.0 - 1e-8);
        let pa = a.probabilities(&va).unwrap();
        let pb = b.probabilities(&vb).unwrap();
        assert!((pa[0] - pb[0]).abs() < 1e-6);
    }

    #[test]
    fn unrestricted_start_is_rejected() {
        let part = half_planes();
        let g = *part.grid();
        let sys = PhaseSpaceSystem::new(
            part,
            HamiltonianSymbol::new(WeylSymbol::constant(&g, 0.0)).unwrap(),
            Backend::Oracle,
            UpdateRule::Quasiprojector,
        )
        .unwrap();
        let opts = TrajectoryOptions { t_final: 1.0, dt: 0.5, schedule: ProjectionSchedule::continuous(0.5), snapshot_stride: None };
        let err = run_trajectory(&sys, &cat(&g, 1.0, 1.0).unit_vector(), &opts, 1).unwrap_err();
        assert!(matches!(err, Error::NotQuasirestricted { .. }), "{err}");
        assert!(ProjectionSchedule::new(0.1, ScheduleMode::Periodic, 0.5).is_err());
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(5, 10, 1.96);
        assert!((lo - 0.236_593).abs() < 1e-5 && (hi - 0.763_407).abs() < 1e-5);
        assert_eq!(loglog_slope(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]).map(|s| (s * 1e9).round() / 1e9), Some(2.0));
    }
}
