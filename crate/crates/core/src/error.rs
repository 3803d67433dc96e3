use thiserror::Error;

/// Errors produced by the simulator and its analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input out of domain: {0}")]
    InputDomain(String),

    #[error("deflection {target_deg:.4} deg is unreachable (max {max_deg:.4} deg at this power)")]
    UnreachableDeflection { target_deg: f64, max_deg: f64 },

    #[error("deflection {alpha_deg:.3} deg on arm {arm} leaves the quasi-static region")]
    InvalidDeflection { arm: usize, alpha_deg: f64 },

    #[error("allocation failed: {0}")]
    Allocation(String),

    #[error("simulation aborted at t={time:.4}s: {reason}")]
    SimulationAbort { time: f64, reason: String },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("trace never settled: {0}")]
    NoConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InputDomain(format!("{name} must be finite, got {v}")))
    }
}
