use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the correspondence engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("degenerate geometry: {} zero-area face(s), first indices {:?}", faces.len(), &faces[..faces.len().min(8)])]
    DegenerateGeometry { faces: Vec<usize> },

    #[error("degenerate neighborhood around point {index}: {reason}")]
    DegenerateNeighborhood { index: usize, reason: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("eigensolver did not converge: {converged} of {requested} eigenpairs within tolerance")]
    ConvergenceFailure { converged: usize, requested: usize },

    #[error("mesh is disconnected: vertex {unreachable} unreachable from vertex {source_vertex}")]
    DisconnectedMesh { source_vertex: usize, unreachable: usize },

    #[error("vertex {vertex} has an empty neighborhood")]
    EmptyNeighborhood { vertex: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("anchor set is empty: {0}")]
    EmptyAnchorSet(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("n = {n} exceeds the enumeration budget of {max}")]
    BudgetExceeded { n: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input (arguments, configs, malformed
    /// files) rather than by a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config { .. }
                | Error::InvalidArgument(_)
                | Error::LengthMismatch { .. }
                | Error::BudgetExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
