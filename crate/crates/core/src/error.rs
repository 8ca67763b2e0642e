use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("energy Gram is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("energy Gram is not positive definite (min eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("resolvent (λI - A) is numerically singular at λ = {re} + {im}i")]
    SingularResolvent { re: f64, im: f64 },

    #[error("mass matrix is numerically singular")]
    SingularMass,

    #[error("invalid beam configuration: {0}")]
    InvalidConfig(String),

    #[error("funnel violated: φ·‖e‖ = {0} ≥ 1")]
    FunnelViolation(f64),

    #[error("argument outside the open unit ball (‖w‖ = {0})")]
    DomainViolation(f64),

    #[error("operator is not coercive (min eigenvalue of P + P* = {0:.3e})")]
    NotCoercive(f64),

    #[error("no iteration budget left: residual {residual:.3e} after {iterations} iterations")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("initial output is outside the funnel: φ(0)·‖e(0)‖ = {0}")]
    NoFeasibleInit(f64),

    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid funnel: {0}")]
    InvalidFunnel(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
