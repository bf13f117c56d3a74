//! Phase-space simulation of open quantum systems on a discrete torus.

pub mod classical;
pub mod coarse;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod moyal;
pub mod oracle;
pub mod regress;
pub mod scenario;
pub mod spectral;
pub mod symplectic;
pub mod transition;
pub mod weyl;
pub mod wigner;

pub use error::{Error, Result};
pub use grid::{PhaseGrid, PhasePoint};
