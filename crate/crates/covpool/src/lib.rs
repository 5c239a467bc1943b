//! MSE-optimal linear pooling of sample covariance matrices.
//!
//! Given K mutually independent classes of observations that share the
//! dimension p, the pooled estimator of one class covariance matrix is a
//! weighted sum of all K sample covariance matrices (optionally plus a scaled
//! identity), with nonnegative weights chosen to minimize the mean squared
//! error. The weights depend only on a handful of scalar statistics per
//! class: the scale, the elliptical kurtosis, the sphericity, and the scaled
//! MSE of each sample covariance matrix, plus the pairwise inner products of
//! the true covariance matrices. All of them are estimable in closed form
//! under elliptical distributions, which is what [`estimators`] provides,
//! with the sphericity and cross terms powered by the spatial sign covariance
//! matrix so the pipeline stays usable when n < p.
//!
//! The crate is organized as:
//!
//! - [`models`]: parametric covariance families (their closed-form
//!   sphericities double as test oracles) and elliptical sampling.
//! - [`estimators`]: per-class statistics and the pooled statistics matrices.
//! - [`qp`]: small dense quadratic programming solvers used for the
//!   coefficient problems and the constrained portfolio.
//! - [`pooling`]: the pooled estimator itself, in its unconstrained,
//!   nonnegative, identity-regularized, and convex-combination variants.
//! - [`multitarget`]: single-class multi-target shrinkage built on pooling
//!   against surrogate samples drawn from target matrices, plus a convex
//!   multi-target baseline.
//! - [`portfolio`]: minimum-variance portfolio weights and a sliding-window
//!   backtester over daily returns.
//! - [`simulator`]: Monte Carlo experiment runners for NMSE studies and the
//!   spatial-sign covariance asymptotics.
//!
//! Everything numeric is generic over [`scalar::Scalar`], which is
//! implemented for `f64` and `Complex64`; the complex instantiation switches
//! the kurtosis and scaled-MSE formulas to their complex-field forms.

pub mod error;
pub mod estimators;
mod linalg;
pub mod models;
pub mod multitarget;
pub mod pooling;
pub mod portfolio;
pub mod qp;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::{Field, Scalar};

/// Complex scalar with double-precision parts.
pub type Complex64 = num_complex::Complex<f64>;

/// Dense real matrix, the concrete type for real-field covariance work.
pub type RealMatrix = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type RealVector = nalgebra::DVector<f64>;
/// Dense complex matrix, the concrete type for complex-field covariance work.
pub type ComplexMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector.
pub type ComplexVector = nalgebra::DVector<Complex64>;

/// Real-field dataset (rows are observations).
pub type RealDataset = estimators::Dataset<f64>;
/// Complex-field dataset (rows are observations).
pub type ComplexDataset = estimators::Dataset<Complex64>;
