//! The regression suite: twelve numbered criteria with overridable thresholds.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::classical::{evolve_region_classically, CellMask, ClassicalObservable, Polynomial};
use crate::coarse::{build_partition, classicality_projectors, mask_operator, quasiprojector_defect, BoxSpec, Partition};
use crate::config::{parse_config_str, ScenarioConfig};
use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::io;
use crate::linalg::{self, Eigh};
use crate::moyal::{evolve_lvn, HamiltonianSymbol, StarProductPlan};
use crate::oracle::{schrodinger_propagate, OperatorMatrix};
use crate::scenario::{run_scenario, RunOptions, Scenario};
use crate::spectral::C64;
use crate::transition::{loglog_slope, Backend, EnsembleSummary, ZenoReport};
use crate::wigner::{
    coherent_state, density_from_wigner, marginals, wavefunction_from_wigner, weyl_operator_from_symbol,
    weyl_symbol_from_operator, wigner_from_wavefunction, WaveFunction, WeylSymbol, WignerState,
};

pub const MEASUREMENT_BALANCED: &str = include_str!("../configs/measurement-balanced.json");
pub const MEASUREMENT_BIASED: &str = include_str!("../configs/measurement-biased.json");
pub const ZENO_DOUBLE_WELL: &str = include_str!("../configs/zeno-double-well.json");
pub const OSCILLATOR: &str = include_str!("../configs/oscillator.json");

/// Pass thresholds; every field can be overridden from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub roundtrip_infidelity: f64,
    pub symbol_roundtrip: f64,
    pub marginals: f64,
    pub moyal_product: f64,
    pub moyal_associativity: f64,
    pub dynamics: f64,
    pub povm_completeness: f64,
    pub povm_eigen_margin: f64,
    pub defect_slope: f64,
    pub defect_slope_tolerance: f64,
    pub projector_algebra: f64,
    pub closeness_factor: f64,
    pub born_tolerance: f64,
    pub zeno_slope: f64,
    pub zeno_slope_tolerance: f64,
    pub restriction_pass_rate: f64,
    pub flow_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            roundtrip_infidelity: 1e-6,
            symbol_roundtrip: 1e-8,
            marginals: 1e-8,
            moyal_product: 1e-6,
            moyal_associativity: 1e-6,
            dynamics: 1e-5,
            povm_completeness: 1e-6,
            povm_eigen_margin: 1e-8,
            defect_slope: 0.5,
            defect_slope_tolerance: 0.15,
            projector_algebra: 1e-10,
            closeness_factor: 3.0,
            born_tolerance: 0.015,
            zeno_slope: 2.0,
            zeno_slope_tolerance: 0.2,
            restriction_pass_rate: 1.0,
            flow_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured quantity.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {}  value {:.4e} threshold {:.4e}  ({:.1}s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.value,
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

pub const CRITERIA: [(u32, &str); 12] = [
    (1, "wigner-weyl round trip"),
    (2, "marginal recovery"),
    (3, "moyal product oracle"),
    (4, "dynamics equivalence"),
    (5, "povm completeness"),
    (6, "defect hbar scaling"),
    (7, "exact projector closeness"),
    (8, "born rule recovery"),
    (9, "zeno dt^2 law"),
    (10, "quasirestriction maintained"),
    (11, "classical flow consistency"),
    (12, "determinism"),
];

fn name_of(id: u32) -> &'static str {
    CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).unwrap_or("unknown")
}

fn result(id: u32, passed: bool, value: f64, threshold: f64, detail: String) -> CriterionResult {
    CriterionResult { id, name: name_of(id), passed, value, threshold, detail, seconds: 0.0 }
}

fn max_abs_real(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Grid of the randomized round-trip suite.
pub fn roundtrip_grid() -> PhaseGrid {
    PhaseGrid::new(1, 128, 10.0, 0.5).expect("valid grid")
}

/// Superposition of one to three coherent states with random complex weights.
pub fn random_state(grid: &PhaseGrid, rng: &mut ChaCha8Rng) -> Result<WaveFunction> {
    let k = rng.random_range(1..=3);
    let mut v = Array1::<C64>::zeros(grid.dim());
    for _ in 0..k {
        let psi = coherent_state(&[rng.random_range(-2.0..2.0)], &[rng.random_range(-2.0..2.0)], grid)?;
        let c = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        v = v + psi.unit_vector().mapv(|a| a * c);
    }
    let n = linalg::vec_norm(&v);
    WaveFunction::from_unit_vector(grid, v.mapv(|a| a / n))
}

fn random_symbol(grid: &PhaseGrid, rng: &mut ChaCha8Rng) -> Result<WeylSymbol> {
    let (x0, p0, s) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.7..1.5));
    let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let vals = grid.sample(|x, p| (-((x[0] - x0).powi(2) + (p[0] - p0).powi(2)) / (s * s)).exp());
    let poly = grid.sample(|x, p| 1.0 + a * x[0] + b * p[0]);
    let phase = grid.sample(|x, p| c * (x[0] - p[0]));
    let z = Array2::from_shape_fn(vals.dim(), |i| C64::new(vals[i] * poly[i], vals[i] * phase[i]));
    WeylSymbol::new(grid, z)
}

/// State recovery with the eigenvector route when the point formula is ill conditioned.
fn recover(w: &WignerState) -> Result<WaveFunction> {
    match wavefunction_from_wigner(w) {
        Ok(psi) => Ok(psi),
        Err(Error::RecoveryThreshold { .. }) => {
            let rho = density_from_wigner(w)?;
            let e = Eigh::new(rho.matrix())?;
            let d = e.values.len();
            WaveFunction::from_unit_vector(w.grid(), e.vectors.column(d - 1).to_owned())
        }
        Err(e) => Err(e),
    }
}

pub fn criterion_roundtrip(t: &Thresholds) -> Result<CriterionResult> {
    let g = roundtrip_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut infidelity, mut symbol_err) = (0.0f64, 0.0f64);
    let runs = 50;
    for _ in 0..runs {
        let psi = random_state(&g, &mut rng)?;
        let back = recover(&wigner_from_wavefunction(&psi)?)?;
        infidelity = infidelity.max(1.0 - psi.inner(&back)?.norm_sqr());
        let a = random_symbol(&g, &mut rng)?;
        let op = weyl_operator_from_symbol(&a)?;
        let again = weyl_symbol_from_operator(&op, &g)?;
        symbol_err = symbol_err.max(linalg::max_abs(&(again.values() - a.values())));
        let op2 = weyl_operator_from_symbol(&again)?;
        symbol_err = symbol_err.max(linalg::max_abs(&(&op2 - &op)));
    }
    let passed = infidelity < t.roundtrip_infidelity && symbol_err < t.symbol_roundtrip;
    Ok(result(
        1,
        passed,
        infidelity.max(symbol_err),
        t.roundtrip_infidelity.min(t.symbol_roundtrip),
        format!("{runs} states, N=128: max infidelity {infidelity:.2e}, max symbol error {symbol_err:.2e}"),
    ))
}

pub fn criterion_marginals(t: &Thresholds) -> Result<CriterionResult> {
    let g = roundtrip_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut err = 0.0f64;
    for _ in 0..50 {
        let psi = random_state(&g, &mut rng)?;
        let _ = random_symbol(&g, &mut rng)?;
        let (px, pp) = marginals(&wigner_from_wavefunction(&psi)?);
        let ex = (&px - &psi.density()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let phi = psi.momentum_amplitudes().mapv(|v| v.norm_sqr());
        let ep = (&pp - &phi).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        err = err.max(ex).max(ep);
    }
    Ok(result(2, err < t.marginals, err, t.marginals, "50 states, position and momentum densities".into()))
}

pub fn criterion_moyal(t: &Thresholds) -> Result<CriterionResult> {
    let g = PhaseGrid::new(1, 64, 6.0, 0.5)?;
    let plan = StarProductPlan::new(&g, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut prod, mut assoc) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let a = random_symbol(&g, &mut rng)?;
        let b = random_symbol(&g, &mut rng)?;
        let c = random_symbol(&g, &mut rng)?;
        let ab = plan.product(&a, &b)?;
        let direct = weyl_operator_from_symbol(&a)?.dot(&weyl_operator_from_symbol(&b)?);
        prod = prod.max(linalg::max_abs(&(&weyl_operator_from_symbol(&ab)? - &direct)));
        let left = plan.product(&ab, &c)?;
        let right = plan.product(&a, &plan.product(&b, &c)?)?;
        assoc = assoc.max(linalg::max_abs(&(left.values() - right.values())));
    }
    Ok(result(
        3,
        prod < t.moyal_product && assoc < t.moyal_associativity,
        prod.max(assoc),
        t.moyal_product.min(t.moyal_associativity),
        format!("20 pairs: product {prod:.2e}, associativity {assoc:.2e}"),
    ))
}

fn lvn_vs_oracle(symbol: WeylSymbol, psi: &WaveFunction, t: f64, dt: f64) -> Result<f64> {
    let op = OperatorMatrix::hermitian(weyl_operator_from_symbol(&symbol)?)?;
    let h = HamiltonianSymbol::new(symbol)?;
    let w = evolve_lvn(&wigner_from_wavefunction(psi)?, &h, t, dt)?;
    let exact = wigner_from_wavefunction(&schrodinger_propagate(psi, &op, t)?)?;
    Ok(max_abs_real(w.values(), exact.values()))
}

pub fn criterion_dynamics(t: &Thresholds) -> Result<CriterionResult> {
    let g = PhaseGrid::new(1, 128, 10.0, 0.5)?;
    let osc = lvn_vs_oracle(WeylSymbol::oscillator(&g), &coherent_state(&[1.5], &[0.5], &g)?, 2.0 * PI, 0.005)?;
    let free = lvn_vs_oracle(
        WeylSymbol::from_fn(&g, |_, p| 0.5 * p[0] * p[0]),
        &coherent_state(&[-1.0], &[0.5], &g)?,
        1.0,
        0.005,
    )?;
    Ok(result(
        4,
        osc < t.dynamics && free < t.dynamics,
        osc.max(free),
        t.dynamics,
        format!("N=128: oscillator period {osc:.2e}, free particle {free:.2e}"),
    ))
}

/// The three partitions used by the completeness and projector criteria.
pub fn partition_fixtures() -> Result<Vec<(&'static str, Partition)>> {
    let half = PhaseGrid::symmetric(1, 64, 0.25)?;
    let boxes = PhaseGrid::new(1, 144, 4.75, 0.1)?;
    let c = 4.75 / 3.0;
    let two = PhaseGrid::symmetric(2, 20, 1.0)?;
    Ok(vec![
        ("half-planes hbar=1/4", build_partition(&half, &BoxSpec::half_planes(1, 0.0))?),
        ("3x3 boxes hbar=0.1", build_partition(&boxes, &BoxSpec::new(vec![vec![-c, c], vec![-c, c]]))?),
        ("two-dof half-spaces hbar=1", build_partition(&two, &BoxSpec::half_planes(2, 0.0))?),
    ])
}

pub fn criterion_povm(t: &Thresholds, fixtures: &[(&str, Partition)]) -> Result<CriterionResult> {
    let (mut worst, mut margin) = (0.0f64, 0.0f64);
    let mut details = Vec::new();
    for (name, p) in fixtures {
        let d = p.grid().dim();
        let sum = p.operators().iter().fold(Array2::<C64>::zeros((d, d)), |a, o| a + o.matrix());
        let res = linalg::operator_norm(&(sum - linalg::identity(d)));
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for r in p.regions() {
            let e = r.operator().eigen()?;
            lo = lo.max(-e.min());
            hi = hi.max(e.max() - 1.0);
        }
        worst = worst.max(res);
        margin = margin.max(lo).max(hi);
        details.push(format!("{name}: {res:.1e}"));
    }
    Ok(result(
        5,
        worst < t.povm_completeness && margin <= t.povm_eigen_margin,
        worst,
        t.povm_completeness,
        format!("{}; eigenvalue excursion {margin:.1e}", details.join(", ")),
    ))
}

/// One row of the half-plane defect sweep.
#[derive(Debug, Clone, Serialize)]
pub struct DefectRow {
    pub hbar: f64,
    pub points: usize,
    pub defect: f64,
    pub operator_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DefectSweep {
    pub rows: Vec<DefectRow>,
    pub slope: Option<f64>,
    /// Root-mean-square residual of the log-log fit.
    pub fit_rms: f64,
}

/// Half-plane partitions at each `(hbar, N)` on symmetric grids.
pub fn defect_sweep(cases: &[(f64, usize)]) -> Result<DefectSweep> {
    let rows: Vec<DefectRow> = cases
        .iter()
        .map(|&(hbar, n)| {
            let g = PhaseGrid::symmetric(1, n, hbar)?;
            let d = quasiprojector_defect(&build_partition(&g, &BoxSpec::half_planes(1, 0.0))?);
            Ok(DefectRow { hbar, points: n, defect: d.defect, operator_norm: d.operator_norm })
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.hbar, r.defect)).collect();
    let slope = loglog_slope(&pts);
    let fit_rms = match slope {
        Some(s) => {
            let n = pts.len() as f64;
            let c = pts.iter().map(|(x, y)| y.ln() - s * x.ln()).sum::<f64>() / n;
            (pts.iter().map(|(x, y)| (y.ln() - s * x.ln() - c).powi(2)).sum::<f64>() / n).sqrt()
        }
        None => f64::NAN,
    };
    Ok(DefectSweep { rows, slope, fit_rms })
}

pub const DEFECT_CASES: [(f64, usize); 3] = [(1.0, 20), (0.25, 64), (0.0625, 256)];

pub fn defect_csv(s: &DefectSweep) -> String {
    let mut out = String::from("hbar,points,defect,operator_norm\n");
    for r in &s.rows {
        out.push_str(&format!("{},{},{},{}\n", r.hbar, r.points, r.defect, r.operator_norm));
    }
    out.push_str(&format!("# slope {},fit_rms {}\n", s.slope.unwrap_or(f64::NAN), s.fit_rms));
    out
}

pub fn criterion_defect(t: &Thresholds, sweep: &DefectSweep) -> CriterionResult {
    let slope = sweep.slope.unwrap_or(f64::NAN);
    let rows: Vec<String> = sweep.rows.iter().map(|r| format!("{}:{:.4}", r.hbar, r.defect)).collect();
    result(
        6,
        (slope - t.defect_slope).abs() <= t.defect_slope_tolerance,
        slope,
        t.defect_slope,
        format!("slope of defect vs hbar over [{}], tolerance {}", rows.join(" "), t.defect_slope_tolerance),
    )
}

pub fn criterion_projectors(t: &Thresholds, fixtures: &[(&str, Partition)]) -> Result<CriterionResult> {
    let (mut algebra, mut ratio) = (0.0f64, 0.0f64);
    let mut details = Vec::new();
    for (name, p) in fixtures {
        let c = classicality_projectors(p)?;
        let d = p.grid().dim();
        let mut total = Array2::<C64>::zeros((d, d));
        for (a, pa) in c.projectors.iter().enumerate() {
            let m = pa.matrix();
            algebra = algebra.max(linalg::max_abs(&(m.dot(m) - m)));
            for pb in &c.projectors[a + 1..] {
                algebra = algebra.max(linalg::max_abs(&m.dot(pb.matrix())));
            }
            total = total + m;
        }
        algebra = algebra.max(linalg::max_abs(&(total - linalg::identity(d))));
        let defect = quasiprojector_defect(p).defect;
        let close = c.closeness.iter().fold(0.0f64, |m, v| m.max(*v));
        ratio = ratio.max(close / defect);
        details.push(format!("{name}: closeness {close:.3} defect {defect:.3}"));
    }
    Ok(result(
        7,
        algebra < t.projector_algebra && ratio <= t.closeness_factor,
        ratio,
        t.closeness_factor,
        format!("closeness/defect ratio; algebra residual {algebra:.1e}; {}", details.join(", ")),
    ))
}

/// Ensemble of a measurement config, together with its expected weights.
pub struct BornRun {
    pub summary: EnsembleSummary,
    pub expected: Vec<(String, f64)>,
    pub oracle: Vec<f64>,
}

pub fn born_run(text: &str, num_seeds: Option<usize>, seed: Option<u64>) -> Result<BornRun> {
    let mut cfg = parse_config_str(text)?;
    if let Some(n) = num_seeds {
        cfg.ensemble.num_seeds = n;
    }
    if let Some(s) = seed {
        cfg.ensemble.base_seed = s;
    }
    let scenario = Scenario::build(&cfg)?;
    let oracle = match (&scenario.system, &cfg.initial_state) {
        (crate::scenario::ScenarioSystem::Measurement(m), crate::config::StateConfig::MeasurementInput { amplitudes, .. }) => {
            m.oracle_outcome_probabilities(amplitudes)?
        }
        _ => return Err(Error::InvalidArgument("not a measurement config".into())),
    };
    let records = scenario.ensemble()?;
    Ok(BornRun {
        summary: EnsembleSummary::from_records(scenario.system.as_dyn().labels(), &records),
        expected: scenario.expected.clone().unwrap_or_default(),
        oracle,
    })
}

pub fn criterion_born(t: &Thresholds, runs: &[BornRun]) -> CriterionResult {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for r in runs {
        for (label, p) in &r.expected {
            let i = r.summary.labels.iter().position(|l| l == label).unwrap_or(0);
            worst = worst.max((r.summary.frequencies[i] - p).abs());
            details.push(format!("{label} {:.4} vs {p:.2}", r.summary.frequencies[i]));
        }
    }
    let n = runs.first().map(|r| r.summary.runs).unwrap_or(0);
    let oracle: Vec<String> = runs.iter().map(|r| format!("{:.4?}", r.oracle)).collect();
    result(
        8,
        worst <= t.born_tolerance,
        worst,
        t.born_tolerance,
        format!("{n} runs each: {}; oracle weights {}", details.join(", "), oracle.join(" ")),
    )
}

/// Zeno sweep plus an anti-Zeno probe with one projection at the tunnelling time.
pub struct ZenoRun {
    pub sweep: ZenoReport,
    pub late: ZenoReport,
}

pub fn zeno_run() -> Result<ZenoRun> {
    let cfg = parse_config_str(ZENO_DOUBLE_WELL)?;
    let scenario = Scenario::build(&cfg)?;
    let sweep = scenario.zeno()?.expect("zeno block");
    // tunnelling time pi hbar / (E1 - E0)
    let mut late_cfg = cfg.clone();
    let tunnel = tunnelling_time(&cfg)?;
    late_cfg.zeno = Some(crate::config::ZenoConfig { dt_proj: vec![tunnel], t_total: 2.0 * tunnel });
    let late = Scenario::build(&late_cfg)?.zeno()?.expect("zeno block");
    Ok(ZenoRun { sweep, late })
}

pub fn tunnelling_time(cfg: &ScenarioConfig) -> Result<f64> {
    let g = cfg.grid.build()?;
    let h = crate::scenario::hamiltonian_symbol(&cfg.hamiltonian, &g)?;
    let e = Eigh::new(&weyl_operator_from_symbol(&h)?)?;
    Ok(PI * g.hbar() / (e.values[1] - e.values[0]))
}

pub fn criterion_zeno(t: &Thresholds, z: &ZenoRun) -> CriterionResult {
    let slope = z.sweep.slope.unwrap_or(f64::NAN);
    let dts: Vec<f64> = z.sweep.rows.iter().map(|r| r.dt_proj).collect();
    let span = dts.iter().cloned().fold(0.0, f64::max) / dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut rows = z.sweep.rows.clone();
    rows.sort_by(|a, b| b.dt_proj.total_cmp(&a.dt_proj));
    let monotone = rows.windows(2).all(|w| w[1].survival >= w[0].survival);
    let late = z.late.rows.first().map(|r| r.survival).unwrap_or(f64::NAN);
    let anti = late < z.late.unmonitored_survival;
    result(
        9,
        (slope - t.zeno_slope).abs() <= t.zeno_slope_tolerance && span >= 10.0 - 1e-9 && monotone && anti,
        slope,
        t.zeno_slope,
        format!(
            "dt span {span:.1}x, survival monotone {monotone}, late projection survival {late:.4} vs unmonitored {:.4}",
            z.late.unmonitored_survival
        ),
    )
}

pub fn criterion_restriction(t: &Thresholds, summaries: &[&EnsembleSummary]) -> CriterionResult {
    let projections: usize = summaries.iter().map(|s| s.projections).sum();
    let failures: usize = summaries.iter().map(|s| s.restriction_failures).sum();
    let rate = if projections == 0 { 0.0 } else { 1.0 - failures as f64 / projections as f64 };
    result(
        10,
        projections > 0 && rate >= t.restriction_pass_rate,
        rate,
        t.restriction_pass_rate,
        format!("{failures} of {projections} projection events failed the 1e-3 restriction test"),
    )
}

/// `max_t ||U Pi_R U^dag - Pi_{Phi_t(R)}||_1 / Tr Pi_R` for the oscillator and the box
/// `[0.5, 2.5] x [-1, 1]`, with the static defect of its partition.
pub fn flow_consistency(times: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    let g = PhaseGrid::new(1, 144, 4.75, 0.1)?;
    let part = build_partition(&g, &BoxSpec::new(vec![vec![0.5, 2.5], vec![-1.0, 1.0]]))?;
    let defect = quasiprojector_defect(&part).defect;
    let region = &part.regions()[part.index_of("R11").ok_or_else(|| Error::InvalidArgument("R11".into()))?];
    let h = OperatorMatrix::hermitian(weyl_operator_from_symbol(&WeylSymbol::oscillator(&g))?)?;
    let classical = ClassicalObservable::polynomial(&g, Polynomial::oscillator(1))?;
    let mask = CellMask::new(&g, region.mask().cells().clone())?;
    let pi = region.operator().matrix();
    let tr = linalg::trace(pi).re;
    let errs = times
        .iter()
        .map(|&t| {
            let u = h.propagator(t, g.hbar())?;
            let moved = u.dot(pi).dot(&linalg::adjoint(&u));
            let image = mask_operator(&evolve_region_classically(&mask, &classical, t, 1e-2)?)?;
            Ok(linalg::trace_norm(&(moved - image.matrix())) / tr)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((errs.iter().cloned().fold(0.0, f64::max), defect, errs))
}

pub fn criterion_flow(t: &Thresholds) -> Result<CriterionResult> {
    let times: Vec<f64> = (1..=8).map(|k| k as f64 * PI / 4.0).collect();
    let (worst, defect, errs) = flow_consistency(&times)?;
    Ok(result(
        11,
        worst <= t.flow_factor * defect,
        worst / defect,
        t.flow_factor,
        format!(
            "ratio to static defect {defect:.4}; errors at t = k pi/4: {:.3?}",
            errs
        ),
    ))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)?
        .map(|e| {
            let e = e?;
            Ok((e.file_name().to_string_lossy().into_owned(), fs::read(e.path())?))
        })
        .collect::<Result<_>>()?;
    files.sort();
    Ok(files)
}

/// Runs each scenario twice into the same directory and compares every file.
pub fn criterion_determinism(work: &Path) -> Result<CriterionResult> {
    let mut cfgs = vec![parse_config_str(OSCILLATOR)?, parse_config_str(MEASUREMENT_BIASED)?];
    cfgs[0].ensemble.num_seeds = 8;
    cfgs[1].ensemble.num_seeds = 500;
    let mut differing = Vec::new();
    let mut compared = 0usize;
    for cfg in &cfgs {
        let dir = work.join(&cfg.name);
        let mut runs = Vec::new();
        for _ in 0..2 {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            run_scenario(cfg, &RunOptions { out_dir: Some(dir.clone()), ..Default::default() })?;
            runs.push(dir_bytes(&dir)?);
        }
        let (a, b) = (&runs[0], &runs[1]);
        compared += a.len();
        if a.len() != b.len() {
            differing.push(format!("{}: file lists differ", cfg.name));
        }
        for ((na, ba), (_, bb)) in a.iter().zip(b) {
            if ba != bb {
                differing.push(format!("{}/{na}", cfg.name));
            }
        }
    }
    Ok(result(
        12,
        differing.is_empty() && compared > 0,
        differing.len() as f64,
        0.0,
        if differing.is_empty() {
            format!("{compared} files byte-identical across repeated runs")
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionReport {
    pub passed: bool,
    pub thresholds: Thresholds,
    pub criteria: Vec<CriterionResult>,
}

#[derive(Debug, Clone, Default)]
pub struct RegressOptions {
    /// Criteria to run; all when empty.
    pub only: Vec<u32>,
    /// Ensemble size of the measurement runs (10^4 by default).
    pub born_seeds: Option<usize>,
    /// Base seed of the measurement and oscillator ensembles.
    pub seed: Option<u64>,
    pub backend: Option<Backend>,
}

/// Run the selected criteria; artifacts go under `out_dir`.
pub fn run_regression(t: &Thresholds, opts: &RegressOptions, out_dir: &Path) -> Result<RegressionReport> {
    fs::create_dir_all(out_dir)?;
    let want = |id: u32| opts.only.is_empty() || opts.only.contains(&id);
    let mut out = Vec::new();
    let timed = |f: &mut dyn FnMut() -> Result<CriterionResult>| -> Result<CriterionResult> {
        let start = Instant::now();
        let mut r = f()?;
        r.seconds = start.elapsed().as_secs_f64();
        Ok(r)
    };
    if want(1) {
        out.push(timed(&mut || criterion_roundtrip(t))?);
    }
    if want(2) {
        out.push(timed(&mut || criterion_marginals(t))?);
    }
    if want(3) {
        out.push(timed(&mut || criterion_moyal(t))?);
    }
    if want(4) {
        out.push(timed(&mut || criterion_dynamics(t))?);
    }
    if want(5) || want(7) {
        let fixtures = partition_fixtures()?;
        if want(5) {
            out.push(timed(&mut || criterion_povm(t, &fixtures))?);
        }
        if want(7) {
            out.push(timed(&mut || criterion_projectors(t, &fixtures))?);
        }
    }
    if want(6) {
        out.push(timed(&mut || {
            let sweep = defect_sweep(&DEFECT_CASES)?;
            fs::write(out_dir.join("defect_sweep.csv"), defect_csv(&sweep))?;
            io::write_json(&out_dir.join("defect_sweep.json"), &sweep)?;
            Ok(criterion_defect(t, &sweep))
        })?);
    }
    if want(8) || want(10) {
        let start = Instant::now();
        let runs = vec![
            born_run(MEASUREMENT_BALANCED, opts.born_seeds, opts.seed)?,
            born_run(MEASUREMENT_BIASED, opts.born_seeds, opts.seed)?,
        ];
        let born_secs = start.elapsed().as_secs_f64();
        if want(8) {
            let mut r = criterion_born(t, &runs);
            r.seconds = born_secs;
            out.push(r);
        }
        if want(10) {
            let start = Instant::now();
            let overrides = RunOptions { seed: opts.seed, backend: opts.backend, ..Default::default() };
            let cfg = overrides.apply(&parse_config_str(OSCILLATOR)?);
            let sc = Scenario::build(&cfg)?;
            let osc = EnsembleSummary::from_records(sc.system.as_dyn().labels(), &sc.ensemble()?);
            let mut r = criterion_restriction(t, &[&runs[0].summary, &runs[1].summary, &osc]);
            r.seconds = start.elapsed().as_secs_f64();
            out.push(r);
        }
    }
    if want(9) {
        out.push(timed(&mut || {
            let z = zeno_run()?;
            fs::write(out_dir.join("zeno.csv"), io::zeno_csv(&z.sweep))?;
            Ok(criterion_zeno(t, &z))
        })?);
    }
    if want(11) {
        out.push(timed(&mut || criterion_flow(t))?);
    }
    if want(12) {
        out.push(timed(&mut || criterion_determinism(&out_dir.join("determinism")))?);
    }
    out.sort_by_key(|r| r.id);
    let report = RegressionReport { passed: out.iter().all(|r| r.passed), thresholds: t.clone(), criteria: out };
    io::write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_override_partially() {
        let t: Thresholds = serde_json::from_str(r#"{"born_tolerance": 0.001}"#).unwrap();
        assert_eq!(t.born_tolerance, 0.001);
        assert_eq!(t.dynamics, 1e-5);
        assert!(serde_json::from_str::<Thresholds>(r#"{"born": 1}"#).is_err());
    }

    #[test]
    fn fixtures_parse() {
        for text in [MEASUREMENT_BALANCED, MEASUREMENT_BIASED, ZENO_DOUBLE_WELL, OSCILLATOR] {
            parse_config_str(text).unwrap();
        }
    }

    #[test]
    fn corrupted_tolerance_names_the_criterion() {
        let t = Thresholds { marginals: 0.0, ..Default::default() };
        let r = criterion_marginals(&t).unwrap();
        assert!(!r.passed);
        assert!(r.line().contains("marginal recovery") && r.line().contains("FAIL"));
    }
}
