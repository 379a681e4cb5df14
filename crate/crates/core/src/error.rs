use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),

    #[error("no spectral energy outside the DC bin")]
    NoSpectralEnergy,

    #[error("series {series}: MASE undefined, in-sample seasonal differences are all zero")]
    MaseUndefined { series: usize },

    #[error("{path}: row {row}, column {column}: {msg}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        msg: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
