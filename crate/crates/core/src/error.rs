//! Crate-wide error type.
//!
//! Every variant maps to a stable machine-readable category so the CLI can
//! print `error: <category>: <detail>` and exit nonzero without string
//! matching on messages.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The transfer-function denominator vanishes on an evaluation grid
    /// point, so the frequency response is undefined there.
    #[error("singular evaluation grid: |den(z_{index})| = {magnitude:.3e}")]
    SingularGrid { index: usize, magnitude: f64 },

    #[error("ill-conditioned selective design: {0}")]
    IllConditioned(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss; `block` names the first
    /// parameter or activation block found carrying the bad value.
    #[error("non-finite loss at step {step} (first non-finite block: {block})")]
    NonFiniteLoss { step: usize, block: String },

    #[error("task generation failed: {0}")]
    Generation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable category token for machine-parsable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::SingularGrid { .. } => "singular-grid",
            Error::IllConditioned(_) => "ill-conditioned-design",
            Error::TokenOutOfRange { .. } => "token-out-of-range",
            Error::Contract(_) => "contract-violation",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Generation(_) => "generation-failed",
            Error::Format(_) => "format-error",
            Error::Io(_) => "io-error",
        }
    }
}
