//! File formats: binary grid dumps, CSV tables and JSON run metadata.
//!
//! Grid dump layout, little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `OSQM` |
//! | 4     | version (u32) |
//! | 4     | degrees of freedom n (u32) |
//! | 4     | points per axis N (u32) |
//! | 8     | hbar (f64) |
//! | 32    | x_min, x_max, p_min, p_max of the sampled axis (f64) |
//!
//! followed by `N^n * N^n` f64 values in row-major order (position multi-index
//! major, momentum multi-index minor).

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::transition::{EnsembleSummary, TrajectoryRecord, ZenoReport};
use crate::wigner::{marginals, WeylSymbol, WignerState};

pub const MAGIC: &[u8; 4] = b"OSQM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub version: u32,
    pub dof: u32,
    pub points: u32,
    pub hbar: f64,
    pub extents: [f64; 4],
}

impl DumpHeader {
    pub fn for_grid(grid: &PhaseGrid) -> Self {
        let n = grid.points();
        Self {
            version: FORMAT_VERSION,
            dof: grid.dof() as u32,
            points: n as u32,
            hbar: grid.hbar(),
            extents: [grid.x_at(0), grid.x_at(n - 1), grid.p_at(0), grid.p_at(n - 1)],
        }
    }

    /// Grid described by the header.
    pub fn grid(&self) -> Result<PhaseGrid> {
        let n = self.points as usize;
        if n < 2 {
            return Err(Error::Format(format!("point count {n} too small")));
        }
        let dx = (self.extents[1] - self.extents[0]) / (n - 1) as f64;
        PhaseGrid::new(self.dof as usize, n, dx * n as f64 / 2.0, self.hbar)
    }
}

pub fn encode_grid(grid: &PhaseGrid, values: &Array2<f64>) -> Result<Vec<u8>> {
    let d = grid.dim();
    if values.dim() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, got: values.nrows() });
    }
    let h = DumpHeader::for_grid(grid);
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&h.dof.to_le_bytes());
    out.extend_from_slice(&h.points.to_le_bytes());
    out.extend_from_slice(&h.hbar.to_le_bytes());
    for e in h.extents {
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<(DumpHeader, Array2<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let header = DumpHeader {
        version: u32_at(4),
        dof: u32_at(8),
        points: u32_at(12),
        hbar: f64_at(16),
        extents: [f64_at(24), f64_at(32), f64_at(40), f64_at(48)],
    };
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    if !(1..=2).contains(&header.dof) {
        return Err(Error::Format(format!("unsupported dof {}", header.dof)));
    }
    let d = (header.points as usize).pow(header.dof);
    let expected = HEADER_LEN + 8 * d * d;
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = Array2::from_shape_fn((d, d), |(i, k)| f64_at(HEADER_LEN + 8 * (i * d + k)));
    Ok((header, values))
}

pub fn write_grid_dump(path: &Path, grid: &PhaseGrid, values: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_grid(grid, values)?)?;
    Ok(())
}

pub fn read_grid_dump(path: &Path) -> Result<(DumpHeader, Array2<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_grid(&bytes)
}

pub fn write_wigner(path: &Path, w: &WignerState) -> Result<()> {
    write_grid_dump(path, w.grid(), w.values())
}

/// Real symbols only; the dump carries no imaginary part.
pub fn write_symbol(path: &Path, s: &WeylSymbol) -> Result<()> {
    write_grid_dump(path, s.grid(), &s.real_values()?)
}

pub fn read_wigner(path: &Path) -> Result<WignerState> {
    let (h, v) = read_grid_dump(path)?;
    WignerState::new(&h.grid()?, v)
}

/// Position and momentum marginals side by side.
pub fn marginals_csv(w: &WignerState) -> String {
    let g = w.grid();
    let (rx, rp) = marginals(w);
    let n = g.dof();
    let mut s = String::new();
    let xs: Vec<String> = (0..n).map(|a| format!("x{a}")).collect();
    let ps: Vec<String> = (0..n).map(|a| format!("p{a}")).collect();
    let _ = writeln!(s, "index,{},position_density,{},momentum_density", xs.join(","), ps.join(","));
    for i in 0..g.dim() {
        let x: Vec<String> = g.position(i).iter().map(|v| v.to_string()).collect();
        let p: Vec<String> = g.momentum(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{i},{},{},{},{}", x.join(","), rx[i], p.join(","), rp[i]);
    }
    s
}

pub fn write_marginals(path: &Path, w: &WignerState) -> Result<()> {
    fs::write(path, marginals_csv(w))?;
    Ok(())
}

/// `step,time,region,p_<label>...,event`.
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let mut s = String::new();
    let cols: Vec<String> = record.labels.iter().map(|l| format!("p_{l}")).collect();
    let _ = writeln!(s, "step,time,region,{},event", cols.join(","));
    for row in &record.steps {
        let p: Vec<String> = row.probabilities.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.step,
            row.time,
            record.labels[row.region],
            p.join(","),
            row.event.code()
        );
    }
    s
}

pub fn write_trajectory(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    fs::write(path, trajectory_csv(record))?;
    Ok(())
}

/// `region,count,runs,frequency,ci_low,ci_high` with 95 % Wilson bounds.
pub fn summary_csv(summary: &EnsembleSummary) -> String {
    let mut s = String::from("region,count,runs,frequency,ci_low,ci_high\n");
    for (i, l) in summary.labels.iter().enumerate() {
        let (lo, hi) = summary.intervals[i];
        let _ = writeln!(s, "{l},{},{},{},{lo},{hi}", summary.counts[i], summary.runs, summary.frequencies[i]);
    }
    s
}

pub fn write_summary(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    fs::write(path, summary_csv(summary))?;
    Ok(())
}

pub fn zeno_csv(report: &ZenoReport) -> String {
    let mut s = String::from("dt_proj,intervals,misprojection,excess,survival,saturated\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.dt_proj, r.intervals, r.misprojection, r.excess, r.survival, r.saturated as u8
        );
    }
    s
}

/// State snapshots as `step,index,re,im` rows.
pub fn snapshots_csv(record: &TrajectoryRecord) -> String {
    let mut s = String::from("step,index,re,im\n");
    for (step, v) in &record.snapshots {
        for (i, c) in v.iter().enumerate() {
            let _ = writeln!(s, "{step},{i},{},{}", c.re, c.im);
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub osqm: &'static str,
    pub grid_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            osqm: env!("CARGO_PKG_VERSION"),
            grid_format: FORMAT_VERSION,
        }
    }
}

/// Everything needed to rerun a scenario.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata<C: Serialize> {
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub backend: String,
    pub config: C,
}

impl<C: Serialize> RunMetadata<C> {
    pub fn new(config: C, seed: u64, backend: String) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash(&config)?,
            seed,
            versions: Versions::default(),
            backend,
            config,
        })
    }
}

/// SHA-256 of the compact JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wigner::{coherent_state, wigner_from_wavefunction};

    #[test]
    fn dump_round_trip() {
        let g = PhaseGrid::new(1, 64, 6.0, 0.5).unwrap();
        let w = wigner_from_wavefunction(&coherent_state(&[0.5], &[-0.3], &g).unwrap()).unwrap();
        let bytes = encode_grid(&g, w.values()).unwrap();
        assert_eq!(&bytes[..4], b"OSQM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 56 + 8 * 64 * 64);
        let (h, v) = decode_grid(&bytes).unwrap();
        assert_eq!(&v, w.values());
        let back = h.grid().unwrap();
        assert!((back.dx() - g.dx()).abs() < 1e-12 && (back.dp() - g.dp()).abs() < 1e-12);
        assert!(decode_grid(&bytes[..100]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_grid(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn marginals_table_shape() {
        let g = PhaseGrid::new(1, 64, 6.0, 0.5).unwrap();
        let w = wigner_from_wavefunction(&coherent_state(&[0.0], &[0.0], &g).unwrap()).unwrap();
        let csv = marginals_csv(&w);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,x0,position_density,p0,momentum_density");
        assert_eq!(lines.len(), 65);
        assert_eq!(lines[1].split(',').count(), 5);
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&serde_json::json!({"a": 1, "b": [1.5, 2.0]})).unwrap();
        let b = config_hash(&serde_json::json!({"a": 1, "b": [1.5, 2.0]})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})).unwrap());
    }
}
