//! Error type shared by the whole crate.

use thiserror::Error;

/// Everything that can go wrong across models, estimators, solvers, and
/// runners. Variants are grouped by what the caller can do about them:
/// fix the inputs (`InvalidModel`, `InvalidInput`, `DimensionMismatch`),
/// bring more data (`InsufficientData`), or treat the instance as
/// numerically intractable (`NotPositiveDefinite`, `Infeasible`,
/// `Numerical`).
#[derive(Debug, Error)]
pub enum Error {
    /// A covariance model or distribution parameter is outside its
    /// admissible range.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The requested closed form does not exist for this model family.
    #[error("no closed-form sphericity for the {0} family; materialize the matrix and use the explicit form")]
    UnsupportedClosedForm(&'static str),

    /// Not enough observations for the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Shapes of related inputs disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix that must be (strictly) positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The constraint set of an optimization problem is empty.
    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    /// A computation produced an unusable value (non-finite, nonpositive
    /// where positivity is required, or an iteration that failed to
    /// converge).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An argument is structurally valid but unacceptable for the call.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// File input could not be read or parsed.
    #[error("failed to read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
