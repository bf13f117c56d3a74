//! JSON scenario configuration.
//!
//! Parsing is strict: unknown keys are rejected, and every problem found in a
//! document is reported together rather than stopping at the first one.

use serde::Serialize;
use serde_json::{Map, Value};
use std::path::Path;

use crate::coarse::{validate_box_spec, BoxSpec};
use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::transition::{Backend, ScheduleMode, UpdateRule};

pub const HAMILTONIAN_PRESETS: [&str; 4] = ["free", "oscillator", "double-well", "von-neumann-coupling"];
pub const STATE_PRESETS: [&str; 5] = ["coherent", "cat", "well-localized", "eigenstate", "measurement-input"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridConfig,
    pub hamiltonian: HamiltonianConfig,
    pub partition: PartitionConfig,
    pub initial_state: StateConfig,
    pub schedule: ScheduleConfig,
    pub ensemble: EnsembleConfig,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeno: Option<ZenoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub dof: usize,
    pub points: usize,
    pub x_extent: f64,
    pub hbar: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<PhaseGrid> {
        PhaseGrid::new(self.dof, self.points, self.x_extent, self.hbar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum HamiltonianConfig {
    Free { mass: f64 },
    Oscillator { mass: f64, omega: f64 },
    DoubleWell { mass: f64, v0: f64, b: f64 },
    /// `H = g A (x) p_pointer` with `A = sum_j lambda_j |j><j|` over oscillator states of the observed system.
    VonNeumannCoupling {
        coupling: f64,
        duration: f64,
        observed_points: usize,
        eigenvalues: Vec<f64>,
    },
}

impl HamiltonianConfig {
    pub fn preset(&self) -> &'static str {
        match self {
            Self::Free { .. } => "free",
            Self::Oscillator { .. } => "oscillator",
            Self::DoubleWell { .. } => "double-well",
            Self::VonNeumannCoupling { .. } => "von-neumann-coupling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionConfig {
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl PartitionConfig {
    pub fn box_spec(&self) -> BoxSpec {
        let spec = BoxSpec::new(self.x.iter().chain(&self.p).cloned().collect());
        match &self.labels {
            Some(l) => spec.with_labels(l.clone()),
            None => spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum StateConfig {
    Coherent { x: Vec<f64>, p: Vec<f64> },
    /// `a |left> + b |right>` of two coherent states at rest.
    Cat { left: Vec<f64>, right: Vec<f64>, amplitudes: Vec<f64> },
    /// Lowest doublet of the Hamiltonian rotated onto one side.
    WellLocalized { side: String },
    Eigenstate { index: usize },
    /// Pointer ready at `pointer_x`, observed system in `sum_j c_j |j>`.
    MeasurementInput { amplitudes: Vec<f64>, pointer_x: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleConfig {
    pub dt: f64,
    pub dt_proj: f64,
    pub t_final: f64,
    pub mode: ScheduleMode,
    pub update: UpdateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub num_seeds: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    pub backend: Backend,
    /// Number of seeds whose trajectory CSV is written.
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoConfig {
    pub dt_proj: Vec<f64>,
    pub t_total: f64,
}

/// Typed reader over one JSON object that remembers the keys it consumed.
struct Block<'a> {
    path: String,
    map: &'a Map<String, Value>,
    seen: Vec<&'static str>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl<'a> Block<'a> {
    fn new(value: &'a Value, path: &str, errs: &mut Vec<String>) -> Option<Self> {
        match value.as_object() {
            Some(map) => Some(Self { path: path.to_string(), map, seen: Vec::new() }),
            None => {
                errs.push(format!("{}: expected an object", if path.is_empty() { "document" } else { path }));
                None
            }
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn missing(&self, key: &str, errs: &mut Vec<String>) {
        errs.push(format!("{}: missing required field", join(&self.path, key)));
    }

    fn f64(&mut self, key: &'static str, default: Option<f64>, errs: &mut Vec<String>) -> f64 {
        match (self.raw(key), default) {
            (Some(v), _) => v.as_f64().unwrap_or_else(|| {
                errs.push(format!("{}: expected a number, got {v}", join(&self.path, key)));
                f64::NAN
            }),
            (None, Some(d)) => d,
            (None, None) => {
                self.missing(key, errs);
                f64::NAN
            }
        }
    }

    fn uint(&mut self, key: &'static str, default: Option<u64>, errs: &mut Vec<String>) -> u64 {
        match (self.raw(key), default) {
            (Some(v), _) => v.as_u64().unwrap_or_else(|| {
                errs.push(format!("{}: expected a non-negative integer, got {v}", join(&self.path, key)));
                0
            }),
            (None, Some(d)) => d,
            (None, None) => {
                self.missing(key, errs);
                0
            }
        }
    }

    fn opt_uint(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<u64> {
        self.raw(key).map(|v| {
            v.as_u64().unwrap_or_else(|| {
                errs.push(format!("{}: expected a non-negative integer, got {v}", join(&self.path, key)));
                0
            })
        })
    }

    fn string(&mut self, key: &'static str, default: Option<&str>, errs: &mut Vec<String>) -> String {
        match (self.raw(key), default) {
            (Some(Value::String(s)), _) => s.clone(),
            (Some(v), _) => {
                errs.push(format!("{}: expected a string, got {v}", join(&self.path, key)));
                String::new()
            }
            (None, Some(d)) => d.to_string(),
            (None, None) => {
                self.missing(key, errs);
                String::new()
            }
        }
    }

    fn numbers(&mut self, key: &'static str, default: Option<Vec<f64>>, errs: &mut Vec<String>) -> Vec<f64> {
        let path = join(&self.path, key);
        match (self.raw(key), default) {
            (Some(v), _) => numbers_at(v, &path, errs),
            (None, Some(d)) => d,
            (None, None) => {
                self.missing(key, errs);
                Vec::new()
            }
        }
    }

    fn number_lists(&mut self, key: &'static str, default: Vec<Vec<f64>>, errs: &mut Vec<String>) -> Vec<Vec<f64>> {
        let path = join(&self.path, key);
        match self.raw(key) {
            None => default,
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| numbers_at(v, &format!("{path}[{i}]"), errs))
                .collect(),
            Some(v) => {
                errs.push(format!("{path}: expected an array of arrays, got {v}"));
                Vec::new()
            }
        }
    }

    fn strings(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<Vec<String>> {
        let path = join(&self.path, key);
        self.raw(key).map(|v| match v.as_array() {
            Some(items) => items
                .iter()
                .filter_map(|s| {
                    let out = s.as_str().map(str::to_string);
                    if out.is_none() {
                        errs.push(format!("{path}: expected strings, got {s}"));
                    }
                    out
                })
                .collect(),
            None => {
                errs.push(format!("{path}: expected an array of strings, got {v}"));
                Vec::new()
            }
        })
    }

    fn finish(self, errs: &mut Vec<String>) {
        for k in self.map.keys() {
            if !self.seen.contains(&k.as_str()) {
                errs.push(format!("{}: unknown key", join(&self.path, k)));
            }
        }
    }
}

fn numbers_at(v: &Value, path: &str, errs: &mut Vec<String>) -> Vec<f64> {
    match v.as_array() {
        Some(items) => items
            .iter()
            .filter_map(|x| {
                let out = x.as_f64();
                if out.is_none() {
                    errs.push(format!("{path}: expected numbers, got {x}"));
                }
                out
            })
            .collect(),
        None => {
            errs.push(format!("{path}: expected an array of numbers, got {v}"));
            Vec::new()
        }
    }
}

fn choice<T>(value: &str, path: &str, options: &[(&str, T)], errs: &mut Vec<String>) -> Option<T>
where
    T: Copy,
{
    let found = options.iter().find(|(k, _)| *k == value).map(|(_, v)| *v);
    if found.is_none() {
        let names: Vec<&str> = options.iter().map(|(k, _)| *k).collect();
        errs.push(format!("{path}: unknown value '{value}'; available: {}", names.join(", ")));
    }
    found
}

fn sub<'a>(top: &mut Block<'a>, key: &'static str, required: bool, errs: &mut Vec<String>) -> Option<Block<'a>> {
    let path = join(&top.path, key);
    match top.raw(key) {
        Some(v) => Block::new(v, &path, errs),
        None => {
            if required {
                top.missing(key, errs);
            }
            None
        }
    }
}

static EMPTY: std::sync::OnceLock<Value> = std::sync::OnceLock::new();

fn empty_block(path: &str) -> Block<'static> {
    let v = EMPTY.get_or_init(|| Value::Object(Map::new()));
    Block { path: path.to_string(), map: v.as_object().expect("object"), seen: Vec::new() }
}

fn parse_grid(b: &mut Block, errs: &mut Vec<String>) -> GridConfig {
    let dof = b.uint("dof", Some(1), errs) as usize;
    let points = b.uint("points", None, errs) as usize;
    let hbar = b.f64("hbar", None, errs);
    // symmetric grid when the extent is omitted
    let symmetric = (2.0 * std::f64::consts::PI * hbar / points.max(1) as f64).sqrt() * points as f64 / 2.0;
    let x_extent = b.f64("x_extent", Some(symmetric), errs);
    GridConfig { dof, points, x_extent, hbar }
}

fn parse_hamiltonian(b: &mut Block, errs: &mut Vec<String>) -> Option<HamiltonianConfig> {
    let preset = b.string("preset", None, errs);
    let path = join(&b.path, "preset");
    let known: Vec<(&str, usize)> = HAMILTONIAN_PRESETS.iter().copied().zip(0..).collect();
    let h = match choice(&preset, &path, &known, errs)? {
        0 => HamiltonianConfig::Free { mass: b.f64("mass", Some(1.0), errs) },
        1 => HamiltonianConfig::Oscillator {
            mass: b.f64("mass", Some(1.0), errs),
            omega: b.f64("omega", Some(1.0), errs),
        },
        2 => HamiltonianConfig::DoubleWell {
            mass: b.f64("mass", Some(1.0), errs),
            v0: b.f64("v0", None, errs),
            b: b.f64("b", None, errs),
        },
        _ => HamiltonianConfig::VonNeumannCoupling {
            coupling: b.f64("coupling", Some(1.0), errs),
            duration: b.f64("duration", None, errs),
            observed_points: b.uint("observed_points", Some(16), errs) as usize,
            eigenvalues: b.numbers("eigenvalues", Some(vec![-1.0, 1.0]), errs),
        },
    };
    Some(h)
}

fn parse_state(b: &mut Block, dof: usize, errs: &mut Vec<String>) -> Option<StateConfig> {
    let preset = b.string("preset", None, errs);
    let path = join(&b.path, "preset");
    let known: Vec<(&str, usize)> = STATE_PRESETS.iter().copied().zip(0..).collect();
    let s = match choice(&preset, &path, &known, errs)? {
        0 => StateConfig::Coherent {
            x: b.numbers("x", None, errs),
            p: b.numbers("p", Some(vec![0.0; dof]), errs),
        },
        1 => StateConfig::Cat {
            left: b.numbers("left", None, errs),
            right: b.numbers("right", None, errs),
            amplitudes: b.numbers("amplitudes", Some(vec![1.0, 1.0]), errs),
        },
        2 => StateConfig::WellLocalized { side: b.string("side", Some("left"), errs) },
        3 => StateConfig::Eigenstate { index: b.uint("index", Some(0), errs) as usize },
        _ => StateConfig::MeasurementInput {
            amplitudes: b.numbers("amplitudes", None, errs),
            pointer_x: b.f64("pointer_x", Some(0.0), errs),
        },
    };
    Some(s)
}

/// Parse and validate a scenario document.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("malformed JSON: {e}")]))?;
    let mut errs = Vec::new();
    let mut top = Block::new(&doc, "", &mut errs).ok_or_else(|| Error::Config(errs.clone()))?;
    let name = top.string("name", Some("scenario"), &mut errs);

    let grid = sub(&mut top, "grid", true, &mut errs).map(|mut b| {
        let g = parse_grid(&mut b, &mut errs);
        b.finish(&mut errs);
        g
    });
    let dof = grid.as_ref().map(|g| g.dof).unwrap_or(1);
    let hamiltonian = sub(&mut top, "hamiltonian", true, &mut errs).and_then(|mut b| {
        let h = parse_hamiltonian(&mut b, &mut errs);
        if h.is_some() {
            b.finish(&mut errs);
        }
        h
    });
    let partition = {
        let mut b = sub(&mut top, "partition", false, &mut errs).unwrap_or_else(|| empty_block("partition"));
        let p = PartitionConfig {
            x: b.number_lists("x", vec![Vec::new(); dof], &mut errs),
            p: b.number_lists("p", vec![Vec::new(); dof], &mut errs),
            labels: b.strings("labels", &mut errs),
        };
        b.finish(&mut errs);
        p
    };
    let initial_state = sub(&mut top, "initial_state", true, &mut errs).and_then(|mut b| {
        let s = parse_state(&mut b, dof, &mut errs);
        if s.is_some() {
            b.finish(&mut errs);
        }
        s
    });
    let schedule = sub(&mut top, "schedule", true, &mut errs).map(|mut b| {
        let dt = b.f64("dt", None, &mut errs);
        let dt_proj = b.f64("dt_proj", Some(dt), &mut errs);
        let t_final = b.f64("t_final", None, &mut errs);
        let mode_s = b.string("mode", Some("continuous"), &mut errs);
        let mode = choice(
            &mode_s,
            &join(&b.path, "mode"),
            &[("continuous", ScheduleMode::Continuous), ("periodic", ScheduleMode::Periodic), ("single-shot", ScheduleMode::SingleShot)],
            &mut errs,
        );
        let update_s = b.string("update", Some("quasiprojector"), &mut errs);
        let update = choice(
            &update_s,
            &join(&b.path, "update"),
            &[("quasiprojector", UpdateRule::Quasiprojector), ("projector", UpdateRule::Projector)],
            &mut errs,
        );
        b.finish(&mut errs);
        ScheduleConfig {
            dt,
            dt_proj,
            t_final,
            mode: mode.unwrap_or(ScheduleMode::Continuous),
            update: update.unwrap_or(UpdateRule::Quasiprojector),
        }
    });
    let ensemble = {
        let mut b = sub(&mut top, "ensemble", false, &mut errs).unwrap_or_else(|| empty_block("ensemble"));
        let e = EnsembleConfig {
            num_seeds: b.uint("num_seeds", Some(1), &mut errs) as usize,
            base_seed: b.uint("base_seed", Some(0), &mut errs),
        };
        b.finish(&mut errs);
        e
    };
    let output = {
        let mut b = sub(&mut top, "output", false, &mut errs).unwrap_or_else(|| empty_block("output"));
        let dir = b.string("dir", Some("out"), &mut errs);
        let snapshot_stride = b.opt_uint("snapshot_stride", &mut errs).map(|v| v as usize);
        let backend_s = b.string("backend", Some("oracle"), &mut errs);
        let backend = choice(&backend_s, "output.backend", &[("phase", Backend::Phase), ("oracle", Backend::Oracle)], &mut errs);
        let trajectories = b.uint("trajectories", Some(1), &mut errs) as usize;
        b.finish(&mut errs);
        OutputConfig { dir, snapshot_stride, backend: backend.unwrap_or(Backend::Oracle), trajectories }
    };
    let zeno = sub(&mut top, "zeno", false, &mut errs).map(|mut b| {
        let z = ZenoConfig {
            dt_proj: b.numbers("dt_proj", None, &mut errs),
            t_total: b.f64("t_total", None, &mut errs),
        };
        b.finish(&mut errs);
        z
    });
    top.finish(&mut errs);

    match (grid, hamiltonian, initial_state, schedule) {
        (Some(grid), Some(hamiltonian), Some(initial_state), Some(schedule)) if errs.is_empty() => {
            let cfg = ScenarioConfig { name, grid, hamiltonian, partition, initial_state, schedule, ensemble, output, zeno };
            let physics = cfg.check();
            if physics.is_empty() {
                Ok(cfg)
            } else {
                Err(Error::Config(physics))
            }
        }
        _ => Err(Error::Config(errs)),
    }
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config_str(&text)
}

fn positive(v: f64, what: &str, errs: &mut Vec<String>) {
    if !(v > 0.0) || !v.is_finite() {
        errs.push(format!("{what} must be positive and finite, got {v}"));
    }
}

impl ScenarioConfig {
    pub fn is_measurement(&self) -> bool {
        matches!(self.hamiltonian, HamiltonianConfig::VonNeumannCoupling { .. })
    }

    /// Cross-checks against the numerical modules; returns every violation.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let grid = match self.grid.build() {
            Ok(g) => Some(g),
            Err(e) => {
                errs.push(format!("grid: {e}"));
                None
            }
        };
        let dof = self.grid.dof;
        match &self.hamiltonian {
            HamiltonianConfig::Free { mass } => positive(*mass, "hamiltonian.mass", &mut errs),
            HamiltonianConfig::Oscillator { mass, omega } => {
                positive(*mass, "hamiltonian.mass", &mut errs);
                positive(*omega, "hamiltonian.omega", &mut errs);
            }
            HamiltonianConfig::DoubleWell { mass, v0, b } => {
                positive(*mass, "hamiltonian.mass", &mut errs);
                positive(*v0, "hamiltonian.v0", &mut errs);
                positive(*b, "hamiltonian.b", &mut errs);
            }
            HamiltonianConfig::VonNeumannCoupling { coupling, duration, observed_points, eigenvalues } => {
                positive(*coupling, "hamiltonian.coupling", &mut errs);
                positive(*duration, "hamiltonian.duration", &mut errs);
                if let Err(e) = PhaseGrid::symmetric(1, *observed_points, self.grid.hbar) {
                    errs.push(format!("hamiltonian.observed_points: {e}"));
                }
                if eigenvalues.len() < 2 {
                    errs.push("hamiltonian.eigenvalues: need at least two outcomes".into());
                }
                if dof != 1 {
                    errs.push("grid.dof: the measurement scenario uses a one-dimensional pointer".into());
                }
                if !matches!(self.initial_state, StateConfig::MeasurementInput { .. }) {
                    errs.push("initial_state.preset: von-neumann-coupling needs the measurement-input state".into());
                }
            }
        }
        if self.partition.x.len() != dof || self.partition.p.len() != dof {
            errs.push(format!(
                "partition: need {dof} x-boundary and {dof} p-boundary arrays, got {} and {}",
                self.partition.x.len(),
                self.partition.p.len()
            ));
        } else if let Some(g) = &grid {
            if let Err(e) = validate_box_spec(g, &self.partition.box_spec()) {
                errs.push(format!("partition: {e}"));
            }
            if let Some(l) = &self.partition.labels {
                let mut sorted = l.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != l.len() {
                    errs.push("partition.labels: labels must be unique".into());
                }
            }
        }
        match &self.initial_state {
            StateConfig::Coherent { x, p } => {
                if x.len() != dof || p.len() != dof {
                    errs.push(format!("initial_state: coherent x and p need {dof} entries"));
                } else if let Some(g) = &grid {
                    if let Err(e) = crate::wigner::coherent_state(x, p, g) {
                        errs.push(format!("initial_state: {e}"));
                    }
                }
            }
            StateConfig::Cat { left, right, amplitudes } => {
                if left.len() != dof || right.len() != dof || amplitudes.len() != 2 {
                    errs.push(format!("initial_state: cat needs {dof}-entry centres and two amplitudes"));
                }
            }
            StateConfig::WellLocalized { side } => {
                if side != "left" && side != "right" {
                    errs.push(format!("initial_state.side: unknown value '{side}'; available: left, right"));
                }
                if !matches!(self.hamiltonian, HamiltonianConfig::DoubleWell { .. }) {
                    errs.push("initial_state.preset: well-localized needs the double-well hamiltonian".into());
                }
            }
            StateConfig::Eigenstate { index } => {
                if grid.map(|g| *index >= g.dim()).unwrap_or(false) {
                    errs.push(format!("initial_state.index: {index} exceeds the grid dimension"));
                }
            }
            StateConfig::MeasurementInput { amplitudes, .. } => {
                if !self.is_measurement() {
                    errs.push("initial_state.preset: measurement-input needs the von-neumann-coupling hamiltonian".into());
                }
                if let HamiltonianConfig::VonNeumannCoupling { eigenvalues, .. } = &self.hamiltonian {
                    if amplitudes.len() != eigenvalues.len() {
                        errs.push(format!(
                            "initial_state.amplitudes: {} entries for {} outcomes",
                            amplitudes.len(),
                            eigenvalues.len()
                        ));
                    }
                }
                if amplitudes.iter().all(|a| *a == 0.0) {
                    errs.push("initial_state.amplitudes: all zero".into());
                }
            }
        }
        let s = &self.schedule;
        positive(s.dt, "schedule.dt", &mut errs);
        if !(s.t_final >= 0.0) {
            errs.push(format!("schedule.t_final must be non-negative, got {}", s.t_final));
        }
        if s.dt > 0.0 && !(s.dt_proj >= s.dt * (1.0 - 1e-9)) {
            errs.push(format!("schedule.dt_proj = {} must be at least dt = {}", s.dt_proj, s.dt));
        }
        if self.ensemble.num_seeds == 0 {
            errs.push("ensemble.num_seeds must be at least 1".into());
        }
        if self.output.snapshot_stride == Some(0) {
            errs.push("output.snapshot_stride must be at least 1".into());
        }
        if let Some(z) = &self.zeno {
            if z.dt_proj.is_empty() {
                errs.push("zeno.dt_proj: need at least one interval".into());
            }
            for v in &z.dt_proj {
                positive(*v, "zeno.dt_proj entries", &mut errs);
            }
            positive(z.t_total, "zeno.t_total", &mut errs);
        }
        errs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
