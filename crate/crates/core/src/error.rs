use thiserror::Error;

/// Errors raised by the simulator.
///
/// Variants are split into two families that the CLI maps onto distinct exit
/// codes: validation failures (bad input, violated preconditions) and
/// numerical aborts (instabilities, failed decompositions).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operands live on different phase-space grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("state not contained in grid: |W| mass in outer shell is {shell_mass:.3e} (limit 1e-6)")]
    Containment { shell_mass: f64 },

    #[error("operator is not Hermitian: max |A - A^H| = {deviation:.3e}")]
    NonHermitian { deviation: f64 },

    #[error("operator is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPositive { min_eigenvalue: f64 },

    #[error(
        "|psi(0)|^2 = {value:.3e} is below 1e-6; recover the state through density_from_wigner \
         and its top eigenvector instead"
    )]
    RecoveryThreshold { value: f64 },

    #[error("unsupported truncation order {0} (supported: 0..=3)")]
    UnsupportedOrder(u32),

    #[error("time integration unstable: relative growth {growth:.3e} at t = {time:.4}; reduce dt below {suggested_dt:.3e}")]
    Unstable { growth: f64, time: f64, suggested_dt: f64 },

    #[error("effects do not sum to the identity: residual norm {residual:.3e}")]
    IncompletePovm { residual: f64 },

    #[error("pointer states are not orthogonal: |<a|b>| = {overlap:.3e}")]
    NonOrthogonal { overlap: f64 },

    #[error("region '{label}' has side {side:.4} along {axis}, below the minimum 5*sqrt(hbar) = {minimum:.4}")]
    RegionTooSmall {
        label: String,
        axis: String,
        side: f64,
        minimum: f64,
    },

    #[error("region '{label}' has an empty interior at eps = {eps:.1e}")]
    EmptyInterior { label: String, eps: f64 },

    #[error("classicality projector construction failed ({reason}); spectrum: {spectrum:?}")]
    ProjectorConstruction { reason: String, spectrum: Vec<f64> },

    #[error("transition into region {region} sampled with probability {probability:.3e}")]
    ForbiddenTransition { region: String, probability: f64 },

    #[error("probability vector is degenerate (all entries zero)")]
    DegenerateProbabilities,

    #[error("initial state is not quasirestricted to any region (best residual {residual:.3e}); every state must lie in some region at all times")]
    NotQuasirestricted { residual: f64 },

    #[error("classical flow left the grid: {0}")]
    FlowEscaped(String),

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed grid dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether this error reports a numerical abort rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable { .. }
                | Error::EigenFailure
                | Error::ProjectorConstruction { .. }
                | Error::ForbiddenTransition { .. }
                | Error::FlowEscaped(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
