use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("current {requested} A exceeds module capability {capability} A")]
    CurrentExceedsCapability { requested: f64, capability: f64 },

    #[error("{what} did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        lo: f64,
        hi: f64,
    },

    #[error("need {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("singular regression: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("unstable AR model: {0}")]
    UnstableModel(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::CurrentExceedsCapability { .. } => "current-exceeds-capability",
            Error::NonConvergence { .. } => "non-convergence",
            Error::InsufficientSamples { .. } => "insufficient-samples",
            Error::Singular(_) => "singular",
            Error::Divergence { .. } => "divergence",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::UnstableModel(_) => "unstable-model",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be finite, got {x}"
        )))
    }
}
