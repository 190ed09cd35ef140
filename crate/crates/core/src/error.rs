use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid mark space: {0}")]
    InvalidMarks(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown name `{name}` (expected one of: {expected})")]
    UnknownName { name: String, expected: String },

    #[error("non-finite {what} at t={t}, p={p:?}")]
    Evaluation {
        what: &'static str,
        t: f64,
        p: Vec<f64>,
    },

    #[error("forward state blew up at step {step}")]
    BlowUp { step: usize },

    #[error("regression basis rank-deficient at step {step}")]
    Basis { step: usize },

    #[error("Picard iteration did not converge at step {step}; residuals {residuals:?}")]
    Divergence { step: usize, residuals: Vec<f64> },

    #[error("point {x:?} lies outside the domain")]
    OutsideDomain { x: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numeric failures as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Evaluation { .. }
                | Error::BlowUp { .. }
                | Error::Basis { .. }
                | Error::Divergence { .. }
        )
    }
}
