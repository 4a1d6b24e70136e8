//! Crate-wide error type and the coarse categories the CLI maps to exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the library.
///
/// Variants are grouped by [`ErrorCategory`]: bad inputs, numerical failures,
/// and optimizer non-convergence. The CLI relies on [`Error::category`] to pick
/// its exit code, so new variants must be added to that match as well.
#[derive(Debug, Error)]
pub enum Error {
    // ---- input / configuration ----
    #[error("parameter `{name}` must be strictly positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("parameter `{name}` is not used by variant {variant} and must not be set")]
    InactiveField {
        name: &'static str,
        variant: &'static str,
    },

    #[error("variant {variant} requires parameter `{name}`")]
    MissingField {
        name: &'static str,
        variant: &'static str,
    },

    #[error("power-law exponent must lie in (0, 1], got {value}")]
    ExponentOutOfRange { value: f64 },

    #[error("tenor grid is empty")]
    EmptyGrid,

    #[error("tenor grid must be strictly increasing with entries ≥ 1: offending index {index}")]
    InvalidGrid { index: usize },

    #[error("lattice of {n_mat} rows is too small: need at least {required} (largest tenor plus boundary margin)")]
    SizeTooSmall { n_mat: usize, required: usize },

    #[error("surfaces are defined on different tenor grids")]
    GridMismatch,

    #[error("correlation surface rejected: {detail}")]
    InvalidSurface { detail: String },

    #[error("line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("expected CSV header `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },

    #[error("line {line}: duplicate record for tenor {tenor_months} months at {timestamp}")]
    DuplicateRecord {
        line: u64,
        tenor_months: u32,
        timestamp: String,
    },

    #[error("line {line}: timestamps for tenor {tenor_months} months go backwards")]
    NonMonotoneTime { line: u64, tenor_months: u32 },

    #[error("not enough data: {detail}")]
    InsufficientData { detail: String },

    #[error("invalid simulation config: {detail}")]
    InvalidSimConfig { detail: String },

    #[error("invalid argument: {detail}")]
    InvalidArgument { detail: String },

    // ---- numerical ----
    #[error("degenerate roots: {detail}")]
    DegenerateRoots { detail: String },

    #[error("quadrature failed to converge: estimated error {err:.3e} after {nodes} nodes")]
    QuadratureNonConvergence { nodes: usize, err: f64 },

    #[error("operator is numerically singular ({detail})")]
    SingularOperator { detail: String },

    #[error("operator is not reliably diagonalizable ({detail})")]
    NonDiagonalizable { detail: String },

    #[error("numerical breakdown: {detail}")]
    NumericalBreakdown { detail: String },

    #[error("integration became unstable at step {step}: |A| reached {max_abs:.3e}")]
    UnstableIntegration { step: usize, max_abs: f64 },

    // ---- convergence ----
    #[error("no optimizer start converged within budget (best objective {best:.6e} over {starts} starts)")]
    NonConvergence { starts: usize, best: f64 },

    // ---- passthrough ----
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input data, malformed files, or invalid configuration.
    Input,
    /// A numerical routine broke down on valid input.
    Numerical,
    /// The optimizer exhausted its budget without converging.
    Convergence,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            NonPositiveParameter { .. }
            | InactiveField { .. }
            | MissingField { .. }
            | ExponentOutOfRange { .. }
            | EmptyGrid
            | InvalidGrid { .. }
            | SizeTooSmall { .. }
            | GridMismatch
            | InvalidSurface { .. }
            | Parse { .. }
            | BadHeader { .. }
            | DuplicateRecord { .. }
            | NonMonotoneTime { .. }
            | InsufficientData { .. }
            | InvalidSimConfig { .. }
            | InvalidArgument { .. }
            | Io(_)
            | Csv(_)
            | Json(_) => ErrorCategory::Input,
            DegenerateRoots { .. }
            | QuadratureNonConvergence { .. }
            | SingularOperator { .. }
            | NonDiagonalizable { .. }
            | NumericalBreakdown { .. }
            | UnstableIntegration { .. } => ErrorCategory::Numerical,
            NonConvergence { .. } => ErrorCategory::Convergence,
        }
    }
}
