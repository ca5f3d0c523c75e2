use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge within {terms} terms (z = {z})")]
    NonConvergence { terms: usize, z: f64 },

    #[error("value overflows f64: {0}")]
    Overflow(String),

    #[error("grid with {points} points under-resolves mode {mode} (need at least {required})")]
    Resolution {
        points: usize,
        mode: usize,
        required: usize,
    },

    #[error("Picard iteration did not converge after {max_iter} sweeps (last difference {last_diff:e})")]
    NoConvergence {
        max_iter: usize,
        last_diff: f64,
        diffs: Vec<f64>,
    },

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
