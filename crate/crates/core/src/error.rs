use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("particle number must be at least 1")]
    NoParticles,
    #[error("preparation angle {0} is outside the open interval (0, pi)")]
    InvalidTheta(f64),
    #[error("dephasing rate {0} must be finite and non-negative")]
    InvalidGamma(f64),
    #[error("phase {0} must be finite")]
    InvalidPhi(f64),
    #[error("negative elapsed dephasing: gamma * phi = {0}")]
    NegativeElapsedDephasing(f64),
    #[error("oracle dimension {0} exceeds the dense limit of {max} particles", max = crate::oracle::MAX_PARTICLES)]
    DimensionTooLarge(u64),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("variance of J_{axis} is {value}, below zero beyond rounding")]
    DegenerateVariance { axis: char, value: f64 },
    #[error("approximation undefined: {0}")]
    ApproximationUndefined(&'static str),
    #[error("invalid search window [{0}, {1}]")]
    InvalidWindow(f64, f64),
    #[error("no resolvable optimum: every scanned point is divergent")]
    Unresolved,
    #[error("scaling exponent undefined for J = {0}")]
    DegenerateExponent(f64),
}
