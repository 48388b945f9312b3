use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A Nemytskii evaluation produced a non-finite grid value; the state
    /// has left the resolvable range.
    #[error("non-finite drift value {value} at grid point xi={xi} (t={t})")]
    NonFiniteField { t: f64, xi: f64, value: f64 },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("storage format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
