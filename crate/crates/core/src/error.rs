use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by model construction, solvers and simulations.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid parameter (e.g. `b < 2`, probabilities not summing to one).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The Laplace transform has no interior minimizer at positive `t`.
    #[error("infimum not interior: {0}")]
    InfimumNotInterior(String),

    /// A family without a free parameter was asked to calibrate.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Linear system could not be solved (singular/degenerate chain).
    #[error("solver error: {0}")]
    Solver(String),

    /// Iterative solver failed to converge within its sweep cap.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Problem size beyond the configured state cap.
    #[error("resource error: {0}")]
    Resource(String),

    /// A two-barrier walk ran past `max_steps` without exiting. Carries the
    /// partial state so the caller can decide what to do with it.
    #[error("walk censored after {steps} steps at position {position}")]
    CensoredWalk { steps: u64, position: f64 },
}
