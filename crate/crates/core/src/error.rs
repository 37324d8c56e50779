use thiserror::Error;

use crate::netmodel::{BusId, LineId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid network: {0}")]
    Model(String),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("unknown line {0}")]
    UnknownLine(LineId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what}: expected length {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("injection profile is unbalanced (sum {0:e} pu)")]
    Unbalanced(f64),
    #[error("reduced bus susceptance matrix is singular; network is disconnected")]
    Singular,
    #[error("outage of line {0} islands the network")]
    Islanding(LineId),
    #[error("{0}")]
    Infeasible(String),
    #[error("linear program: {0}")]
    Lp(#[from] crate::place_lp::simplex::LpError),
}

impl Error {
    /// True for errors that describe a well-formed but infeasible instance.
    pub fn is_infeasibility(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::Islanding(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
