use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("point belongs to a different manifold than the system")]
    DomainMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("eta sample minimum {minimum:e} is below 1e-9; T0 is too close to a period")]
    EtaTooSmall { minimum: f64 },

    #[error("local constant calibration failed after {rounds} shrink rounds")]
    CalibrationFailure { rounds: usize },

    #[error("bound violated: {quantity} = {value:e} against bound {bound:e}")]
    BoundViolation {
        quantity: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("section-time iteration left [-mu1, mu1] (tau = {tau:e})")]
    Divergence { tau: f64 },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("orbit window not found: the orbit arc stays inside the ball up to +-mu")]
    WindowNotFound,

    #[error(
        "no orbit-time match: minimized residual {residual:e} exceeds tolerance {tolerance:e}"
    )]
    NoMatch { residual: f64, tolerance: f64 },

    #[error("orbit basis is degenerate (smallest singular value {sigma_min:e})")]
    DegenerateBasis { sigma_min: f64 },

    #[error("point is off the local orbit: normal component {normal:e} exceeds {tolerance:e}")]
    OffOrbit { normal: f64, tolerance: f64 },

    #[error("point is outside the flowbox chart (residual {residual:e})")]
    OutsideChart { residual: f64 },

    #[error("least-squares system is rank deficient")]
    RankDeficient,

    #[error("no admissible time scale a found in the dyadic search")]
    NoAdmissibleScale,
}

pub type Result<T> = std::result::Result<T, LabError>;
