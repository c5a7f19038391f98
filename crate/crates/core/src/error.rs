use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("mutual invasibility does not hold for these parameters")]
    NotInvasible,

    #[error("orbit left the finite range at step {step}")]
    OrbitDivergence { step: usize },

    #[error("pmf support exceeds the resolution budget of {budget} points")]
    Resolution { budget: usize },

    #[error("cap {cap} too small: row ({m}, {n}) leaks {leak:e} beyond the cap (budget {budget:e})")]
    CapTooSmall {
        cap: usize,
        m: usize,
        n: usize,
        leak: f64,
        budget: f64,
    },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("degenerate fit: {0}")]
    Fit(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {v}")))
    }
}
