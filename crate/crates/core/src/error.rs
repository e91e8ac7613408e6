use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the numerical pipeline can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite evaluation of {what} at x={x:?}, u={u:?}")]
    NonFiniteEvaluation {
        what: &'static str,
        x: Vec<f64>,
        u: Vec<f64>,
    },
    #[error("sample plan is empty")]
    EmptySamplePlan,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("operator is not cooperative: positive off-diagonal {value:e} at row {row}, column {col}")]
    NotCooperative { row: usize, col: usize, value: f64 },
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("iterate lost positivity (min {min:e}); grid likely too coarse for the drift")]
    SignFailure { min: f64 },
    #[error("could not bracket the extremum: {0}")]
    BracketFailure(String),
    #[error("zero state is not linearly unstable: k(0,e) = {k0:e} >= 0")]
    UnstableZeroState { k0: f64 },
    #[error("speed {c} is below the minimal speed {c_star}")]
    SpeedBelowMinimal { c: f64, c_star: f64 },
    #[error("speed {c} is not strictly above the minimal speed {c_star}")]
    SpeedNotSupercritical { c: f64, c_star: f64 },
    #[error("decay gap {gap:e} between the characteristic roots is degenerate")]
    DegenerateDelta { gap: f64 },
    #[error("finite-difference eigenfunction derivative unstable (ratio spread {spread})")]
    EigenDerivativeUnstable { spread: f64 },
    #[error("barrier {kind} fails verification: violation {violation:e} exceeds tolerance {tol:e}")]
    BarrierInvalid { kind: String, violation: f64, tol: f64 },
    #[error("verification window has no points inside the validity region")]
    WindowOutsideValidity,
    #[error("direction vector is zero")]
    ZeroVector,
    #[error("time step violates the reaction bound: dt*Lip = {value}")]
    CflViolation { value: f64 },
    #[error("iterate became negative (min {min:e})")]
    NonpositiveIterate { min: f64 },
    #[error("barrier envelope collapsed: upper < lower by {gap:e} at node {node}")]
    EnvelopeCollapse { node: usize, gap: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("negative overshoot {min:e} beyond tolerance")]
    NegativeOvershoot { min: f64 },
    #[error("front reached the domain wall (wall value {value:e})")]
    FrontHitWall { value: f64 },
    #[error("front not formed: level set undefined after t = {t}")]
    FrontNotFormed { t: f64 },
    #[error("hypothesis unmet: {0}")]
    HypothesisUnmet(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
