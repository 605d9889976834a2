use std::fmt;

use crate::estimator::EstimationTrace;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structured error raised while reading an IEEE Common Data Format file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line number in the input, 0 when the error concerns the file as a whole.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("case parse error: {0}")]
    Parse(#[from] ParseError),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid meter specification: {0}")]
    InvalidMeter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unobservable network: {0}")]
    Unobservable(String),

    #[error("estimation infeasible at iteration {}: removing meter row {removed_row} leaves the state unobservable", trace.iterations.len())]
    EstimationInfeasible {
        removed_row: usize,
        trace: Box<EstimationTrace>,
    },

    #[error("unidentifiable bad data at iteration {}: detector fired but every normalized residual is zero", trace.iterations.len())]
    UnidentifiableBadData { trace: Box<EstimationTrace> },

    #[error("Gauss-Newton iteration diverged after {iterations} steps")]
    NonConvergence { iterations: usize },

    #[error("no framing attack exists for this adversary/framed pair (feasible dimension is zero)")]
    NoFramingAttack,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("oracle verdict unavailable: {0}")]
    OracleInconclusive(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    ///
    /// 2 = input error, 3 = infeasible scenario, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::InvalidNetwork(_)
            | Error::InvalidMeter(_)
            | Error::InvalidInput(_)
            | Error::Config(_)
            | Error::Io(_) => 2,
            Error::Unobservable(_)
            | Error::EstimationInfeasible { .. }
            | Error::NoFramingAttack
            | Error::OracleInconclusive(_) => 3,
            Error::UnidentifiableBadData { .. } | Error::NonConvergence { .. } | Error::Numerical(_) => 4,
        }
    }
}
