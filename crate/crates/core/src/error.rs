//! Error type shared across the library.
//!
//! Numerical failures are reported loudly rather than papered over: SPD
//! factorizations are attempted without jitter, and a failure surfaces as an
//! error so the caller can decide what to do (the model search maps
//! per-model singularities to a -inf score instead of aborting the run).

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input contains a NaN or infinite value.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Instrument matrix is rank deficient after centering (smallest singular
    /// value <= 1e-8 times the largest).
    #[error("instrument matrix is rank deficient after centering: smallest/largest singular value ratio {0:.3e}")]
    RankDeficient(f64),

    /// Shapes or argument values violate a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix expected to be symmetric is not (beyond tolerance).
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    /// Cholesky factorization failed: matrix is not positive definite.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// The per-model SPD factorization failed for this invalid-instrument set.
    #[error("model fit is singular for this invalid-instrument set")]
    SingularModel,

    /// The heteroscedastic moment-weight matrix is singular.
    #[error("heteroscedastic weight matrix is singular")]
    SingularWeight,

    /// Every candidate model (the initial one and its whole neighborhood)
    /// scored -inf, so the search has nothing to work with.
    #[error("all candidate models are singular")]
    AllSingular,

    /// Exhaustive enumeration would exceed the guard limit.
    #[error("model space has {count} members, exceeding the exhaustive-enumeration limit of {limit}")]
    TooLargeForExhaustive { count: u128, limit: u128 },

    /// A model in the acceptable set has no fitted record.
    #[error("no fit available for a model in the acceptable set")]
    MissingFit,

    /// A first-stage coefficient is numerically zero, so the ratio estimate
    /// for that instrument is undefined.
    #[error("first-stage coefficient for instrument {0} is numerically zero")]
    ZeroFirstStage(usize),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
