use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constant column {0}")]
    ConstantColumn(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at sweep {iteration}, coordinate ({row}, {col})")]
    NonFinite {
        iteration: usize,
        row: usize,
        col: usize,
    },

    #[error(
        "line search failed: delta = {delta:e}, f(current) = {f_current}, f(last trial) = {f_trial}"
    )]
    LineSearch {
        delta: f64,
        f_current: f64,
        f_trial: f64,
    },

    #[error("ECM iteration {iteration}: {source}")]
    Ecm {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid cell ({row}, {col}): {source}")]
    GridCell {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("conditional exploration phase {phase}: {source}")]
    Phase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical routines, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::LineSearch { .. } => {
                true
            }
            Error::Ecm { source, .. }
            | Error::GridCell { source, .. }
            | Error::Phase { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_ecm_iteration(self, iteration: usize) -> Error {
        Error::Ecm {
            iteration,
            source: Box::new(self),
        }
    }
}
