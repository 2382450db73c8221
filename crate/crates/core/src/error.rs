use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes shared by every module. The CLI maps them onto exit codes
/// through [`Error::class`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value {value} encountered at z = {z}")]
    NumericDomain { z: f64, value: f64 },

    #[error("step size collapsed below {dt_min:e} at state {state}")]
    Stiffness { state: f64, dt_min: f64 },

    #[error("entrance condition fails: {0}")]
    EntranceCondition(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("numerical blow-up in path {path} at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error("domain too small: truncated tail mass {tail:e} exceeds {limit:e}; try z_max >= {suggested}")]
    DomainTooSmall { tail: f64, limit: f64, suggested: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("mass drift {drift:e} exceeds {limit:e}")]
    Conservation { drift: f64, limit: f64 },

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("profile never reaches level {eta} within horizon (last value {last} at t = {t_last})")]
    Horizon { eta: f64, last: f64, t_last: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter { .. }
            | Error::InvalidInput(_)
            | Error::IncompatibleGrid(_)
            | Error::Range(_) => ErrorClass::Input,
            _ => ErrorClass::Numeric,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
