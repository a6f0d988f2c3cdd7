use thiserror::Error;

use crate::service::ValidationReport;

/// Errors raised by the dynamical-queue library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid service profile: {0}")]
    InvalidProfile(ValidationReport),

    #[error("cannot idle from state {from} up to state {to}: decay never raises the state")]
    InfeasibleIdle { from: f64, to: f64 },

    #[error("{routine} did not converge within {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("server state {value} left [0, 1] beyond rounding tolerance")]
    StateOutOfRange { value: f64 },

    #[error(
        "critical point is degenerate (x_th = {x_th}); stability certificates require x_th < 1"
    )]
    Degenerate { x_th: f64 },

    #[error("arrival rate {lambda} exceeds the critical rate {lambda_eq_max}")]
    AboveCritical { lambda: f64, lambda_eq_max: f64 },

    #[error("arrival rate {lambda} does not exceed the critical rate {lambda_eq_max}")]
    NotAboveCritical { lambda: f64, lambda_eq_max: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory has {have} service starts, at least {need} are required")]
    TooShort { have: usize, need: usize },

    #[error("no feasible schedule on the search grid")]
    NoFeasibleSchedule,
}

impl Error {
    /// True for failures of an iterative numerical routine, as opposed to
    /// rejected inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::StateOutOfRange { .. }
        )
    }

    pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            what,
            value,
            domain,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
