use crate::posterior::PosteriorState;

/// Errors produced by the isbor library.
#[derive(Debug, thiserror::Error)]
pub enum IsborError {
    /// A caller violated an operation precondition (bad shape, bad index,
    /// invalid category, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A numeric computation failed (non-finite intermediate, Cholesky
    /// breakdown after the full jitter ladder, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Newton-Raphson MAP estimation ran out of iterations. The best
    /// iterate found so far is attached so callers can decide whether to
    /// keep going with it.
    #[error("MAP estimation did not converge after {iterations} Newton iterations (grad norm {grad_norm:.3e})")]
    MapNotConverged {
        iterations: usize,
        grad_norm: f64,
        best: Box<PosteriorState>,
    },

    /// A file could not be parsed (CSV rows, model files, manifests).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IsborError>;

impl IsborError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        IsborError::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        IsborError::Numeric(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        IsborError::Parse(msg.into())
    }
}
