use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violates a documented precondition.
    Parameter(String),
    /// Two vectors or sets disagree on dimension.
    Dimension { expected: usize, found: usize },
    /// A quantity was requested outside its domain (e.g. ε at t = 0).
    Domain(String),
    /// A timestep transition that does not strictly decrease.
    Ordering { from: usize, to: usize },
    /// A tape primitive produced a non-finite value.
    Evaluation { primitive: &'static str, node: usize },
    /// A query against an empty reference set.
    EmptyReferences,
    /// Inconsistent guidance or run configuration.
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Dimension { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Ordering { from, to } => {
                write!(f, "timestep ordering error: cannot step from {from} to {to}")
            }
            Error::Evaluation { primitive, node } => {
                write!(f, "non-finite value in primitive `{primitive}` at node {node}")
            }
            Error::EmptyReferences => write!(f, "reference set is empty"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
