//! Scalar field abstraction.
//!
//! The estimators and the pooled estimator work verbatim over real and
//! complex observations; only three things depend on the field: the lower
//! bound of the elliptical kurtosis, the kurtosis estimator itself, and the
//! scaled-MSE formula. [`Scalar`] carries that switch as a [`Field`] marker
//! on top of nalgebra's `ComplexField`, plus a standardized RNG draw so the
//! samplers stay generic.

use nalgebra::ComplexField;
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

/// Marks which number field a computation runs over.
///
/// Carried through the statistics pipeline so that scalar formulas (kurtosis
/// bound, scaled MSE) can branch even where no element type is at hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    /// Lower bound of the elliptical kurtosis in dimension `p`:
    /// `-2/(p+2)` over the reals, `-1/(p+1)` over the complex field.
    pub fn kurtosis_lower_bound(self, p: usize) -> f64 {
        match self {
            Field::Real => -2.0 / (p as f64 + 2.0),
            Field::Complex => -1.0 / (p as f64 + 1.0),
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, Field::Complex)
    }
}

/// Element type of observations and covariance matrices: `f64` or
/// `Complex<f64>`.
///
/// Both instantiations run all linear algebra at double precision; the
/// associated [`Field`] selects between the real and complex forms of the
/// scalar statistics.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    /// The field this scalar belongs to.
    const FIELD: Field;

    /// Lower bound of the elliptical kurtosis in dimension `p`.
    fn kurtosis_lower_bound(p: usize) -> f64 {
        Self::FIELD.kurtosis_lower_bound(p)
    }

    /// Draws one standardized entry: zero mean, `E|z|^2 = 1`. The complex
    /// field splits the unit variance evenly between the real and imaginary
    /// parts.
    fn standard_entry<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;

    fn standard_entry<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for Complex<f64> {
    const FIELD: Field = Field::Complex;

    fn standard_entry<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }
}
