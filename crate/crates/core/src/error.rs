use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward already ran on this graph; build a new graph with a fresh forward pass")]
    BackwardTwice,

    #[error("code corruption: {0}")]
    Corrupt(String),

    #[error(
        "code geometry mismatch: expected (c={expected_c}, l={expected_l}), got (c={c}, l={l})"
    )]
    Geometry {
        expected_c: usize,
        expected_l: usize,
        c: usize,
        l: usize,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
