use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("LAPACK failure: {0}")]
    Lapack(String),
}

/// Which half of the decay gate rejected an extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateFailure {
    TensorTail,
    InhomogeneityTail,
}

impl std::fmt::Display for GateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateFailure::TensorTail => f.write_str("transfer-tensor tail"),
            GateFailure::InhomogeneityTail => f.write_str("inhomogeneity tail"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge (error estimate {estimate:.3e}, tolerance {tolerance:.3e})")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("exponential fit residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    FitTolerance { residual: f64, tolerance: f64 },

    #[error("basis is rank deficient (Gram condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error(
        "hierarchy unstable at t = {time:.4}: ADO norm {norm:.3e}; \
         reduce the time step (more substeps) or increase the depth"
    )]
    Instability { norm: f64, time: f64 },

    #[error("stationary state not reached by t = {t_max}: derivative norm {derivative_norm:.3e}")]
    StationaryNotReached { derivative_norm: f64, t_max: f64 },

    #[error(
        "decay gate failed on the {which}: ratio {ratio:.3e} exceeds threshold {threshold:.3e}; \
         use a longer sample"
    )]
    DecayGate {
        which: GateFailure,
        ratio: f64,
        threshold: f64,
    },

    #[error("Hilbert space dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("thermal occupancy {occupancy:.3e} of the highest Fock level exceeds 1%; increase the cutoff")]
    FockCutoff { occupancy: f64 },

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
