use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("row {row} has no valid entries to normalize over")]
    DegenerateRow { row: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid graph: {0}")]
    Validation(String),

    #[error("node {node} has zero degree")]
    ZeroDegree { node: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("dense attention over {nodes} nodes exceeds the {limit}-node capacity guard")]
    Capacity { nodes: usize, limit: usize },
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

    /// Whether this error stems from user input (configuration or file
    /// contents) rather than from a failure during compute.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Validation(_)
        )
    }
}
