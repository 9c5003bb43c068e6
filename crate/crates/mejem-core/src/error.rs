//! Error type shared across the workspace.

use std::io;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// Variants are grouped by how the CLI should exit: configuration and usage
/// problems (`Config`, `Contract`, `Dim`), data problems (`Data`, `Parse`,
/// `Metric`, `Io`), and numerical divergence during training (`Divergence`).
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a tensor operation; reports both operand shapes.
    #[error("dimension mismatch in {op}: lhs shape {lhs:?}, rhs shape {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid dataset contents (labels out of range, ragged rows, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Parse failure in an input file, located by path and 1-based line.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training or sampling produced non-finite or runaway values.
    #[error("divergence: {0}")]
    Divergence(String),

    /// A metric is undefined for the given inputs (e.g. an empty class).
    #[error("metric undefined: {0}")]
    Metric(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for config/usage errors, 2 for data
    /// errors, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Dim { .. } => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Metric(_) | Error::Io(_) => 2,
            Error::Divergence(_) => 3,
        }
    }
}
