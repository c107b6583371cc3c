use alloc::string::String;

/// Errors raised by the model, estimators and evaluation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input value lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or infeasible configuration (shapes, counts, options).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed data: shapes that do not conform, unknown features, bad visits.
    #[error("schema error: {0}")]
    Schema(String),
    /// The estimator produced non-finite log-likelihoods for too long.
    #[error("numerical divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
