use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum DotError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    NotConverged {
        iterations: usize,
        violation: f64,
        /// Last iterate of the solver.
        plan: Box<crate::ot::TransportPlan>,
    },

    #[error("problem too large for exact solver: {cells} cells (limit {limit})")]
    Capacity { cells: usize, limit: usize },

    #[error("transport plan row {row} has zero mass")]
    DegenerateRow { row: usize },

    #[error("class coverage: {0}")]
    Coverage(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: i64, classes: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DotError {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        DotError::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DotError::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class, used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            DotError::Parameter(_) => ErrorKind::Config,
            DotError::Numeric(_) | DotError::NotConverged { .. } | DotError::Training { .. } => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

pub type Result<T, E = DotError> = std::result::Result<T, E>;
