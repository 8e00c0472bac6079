use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-facing parameter failed validation. The message lists every
    /// offending field so a bad config can be fixed in one pass.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Out-of-range element or function index.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// All stabilization components vanished (a = 0, kappa = 0 and no
    /// temporal part); tau is undefined.
    #[error("degenerate stabilization: all tau components are zero")]
    DegenerateStabilization,

    /// The linear solver could not reach the required residual.
    #[error("linear solve failed: relative residual {residual:.3e} exceeds {tolerance:.3e}")]
    SolveFailure { residual: f64, tolerance: f64 },

    /// A per-step solve failed inside the time loop.
    #[error("solver failure at step {step}: relative residual {residual:.3e} exceeds {tolerance:.3e}")]
    StepSolveFailure {
        step: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A formulation was asked to do something it does not support.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
