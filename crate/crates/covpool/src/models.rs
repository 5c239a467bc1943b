//! Parametric covariance families and elliptical sample generation.
//!
//! The families here serve two roles: they are the ground truths of the
//! Monte Carlo experiments, and the ones with closed-form sphericity act as
//! oracles for the sphericity estimators. Sampling covers the Gaussian and
//! the heavy-tailed elliptical t (degrees of freedom above 4 so fourth-order
//! moments exist), over either scalar field.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::linalg;
use crate::scalar::Scalar;

/// Parametric covariance matrix over the scalar field `T`.
#[derive(Debug, Clone)]
pub enum CovarianceModel<T: Scalar> {
    /// First-order autoregressive structure: entry `(i, j)` with `i <= j` is
    /// `sigma2 * rho^(j-i)`, conjugate-symmetric below the diagonal.
    /// Requires `|rho| < 1`.
    Ar1 { p: usize, sigma2: f64, rho: T },

    /// Compound symmetry (equicorrelation): `sigma2` on the diagonal,
    /// `sigma2 * rho` everywhere else. Hermitian symmetry forces a real
    /// `rho`; positive definiteness requires `-1/(p-1) < rho < 1`.
    CompoundSymmetry { p: usize, sigma2: f64, rho: f64 },

    /// Correlation on the first off-diagonal band only. Positive definite
    /// exactly when `2 * |rho| * cos(pi / (p + 1)) < 1`.
    Banded1 { p: usize, sigma2: f64, rho: T },

    /// A positive semidefinite low-rank component plus `alpha` times the
    /// identity. Requires `alpha > 0`, which makes the sum positive
    /// definite.
    Spiked { low_rank: DMatrix<T>, alpha: f64 },

    /// Any explicitly given Hermitian positive definite matrix.
    Explicit { matrix: DMatrix<T> },
}

impl<T: Scalar> CovarianceModel<T> {
    /// Dimension of the covariance matrix.
    pub fn p(&self) -> usize {
        match self {
            Self::Ar1 { p, .. } | Self::CompoundSymmetry { p, .. } | Self::Banded1 { p, .. } => *p,
            Self::Spiked { low_rank, .. } => low_rank.nrows(),
            Self::Explicit { matrix } => matrix.nrows(),
        }
    }

    /// Short family name for error messages and reports.
    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Ar1 { .. } => "ar1",
            Self::CompoundSymmetry { .. } => "compound-symmetry",
            Self::Banded1 { .. } => "banded1",
            Self::Spiked { .. } => "spiked",
            Self::Explicit { .. } => "explicit",
        }
    }

    /// Checks the parameter ranges that make the model a valid (Hermitian,
    /// positive definite) covariance matrix.
    pub fn validate(&self) -> Result<()> {
        let check_common = |p: usize, sigma2: f64| -> Result<()> {
            if p == 0 {
                return Err(Error::InvalidModel("dimension p must be positive".into()));
            }
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "variance sigma2 must be positive and finite, got {sigma2}"
                )));
            }
            Ok(())
        };
        match self {
            Self::Ar1 { p, sigma2, rho } => {
                check_common(*p, *sigma2)?;
                let r = rho.modulus();
                if !(r < 1.0 && r.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "ar1 requires |rho| < 1, got |rho| = {r}"
                    )));
                }
                Ok(())
            }
            Self::CompoundSymmetry { p, sigma2, rho } => {
                check_common(*p, *sigma2)?;
                if !rho.is_finite() || *rho >= 1.0 {
                    return Err(Error::InvalidModel(format!(
                        "compound symmetry requires rho < 1, got {rho}"
                    )));
                }
                if *p > 1 && *rho <= -1.0 / (*p as f64 - 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "compound symmetry requires rho > -1/(p-1) = {}, got {rho}",
                        -1.0 / (*p as f64 - 1.0)
                    )));
                }
                Ok(())
            }
            Self::Banded1 { p, sigma2, rho } => {
                check_common(*p, *sigma2)?;
                let r = rho.modulus();
                let bound = 2.0 * r * (std::f64::consts::PI / (*p as f64 + 1.0)).cos();
                if !(r.is_finite() && bound < 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "banded1 requires 2|rho|cos(pi/(p+1)) < 1, got {bound}"
                    )));
                }
                Ok(())
            }
            Self::Spiked { low_rank, alpha } => {
                if low_rank.nrows() == 0 || !low_rank.is_square() {
                    return Err(Error::InvalidModel(
                        "spiked low-rank component must be square and nonempty".into(),
                    ));
                }
                if !(alpha > &0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "spiked noise level alpha must be positive and finite, got {alpha}"
                    )));
                }
                if !linalg::is_hermitian(low_rank, linalg::STRUCT_TOL) {
                    return Err(Error::InvalidModel(
                        "spiked low-rank component must be Hermitian".into(),
                    ));
                }
                let eig = low_rank.clone().symmetric_eigen();
                let max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
                let floor = -linalg::STRUCT_TOL * max.max(1.0);
                if eig.eigenvalues.iter().any(|&l| l < floor) {
                    return Err(Error::InvalidModel(
                        "spiked low-rank component must be positive semidefinite".into(),
                    ));
                }
                Ok(())
            }
            Self::Explicit { matrix } => {
                if matrix.nrows() == 0 || !matrix.is_square() {
                    return Err(Error::InvalidModel(
                        "explicit covariance must be square and nonempty".into(),
                    ));
                }
                if !linalg::is_hermitian(matrix, linalg::STRUCT_TOL) {
                    return Err(Error::InvalidModel("explicit covariance must be Hermitian".into()));
                }
                if matrix.clone().cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite(
                        "explicit covariance failed a Cholesky factorization".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Builds the dense covariance matrix.
    pub fn materialize(&self) -> Result<DMatrix<T>> {
        self.validate()?;
        let m = match self {
            Self::Ar1 { p, sigma2, rho } => {
                let s = *sigma2;
                let mut m = DMatrix::zeros(*p, *p);
                for j in 0..*p {
                    for i in 0..=j {
                        let v = rho.powi((j - i) as i32) * T::from_real(s);
                        m[(i, j)] = v;
                        m[(j, i)] = v.conjugate();
                    }
                }
                m
            }
            Self::CompoundSymmetry { p, sigma2, rho } => {
                let diag = T::from_real(*sigma2);
                let off = T::from_real(*sigma2 * *rho);
                DMatrix::from_fn(*p, *p, |i, j| if i == j { diag } else { off })
            }
            Self::Banded1 { p, sigma2, rho } => {
                let s = *sigma2;
                let mut m = DMatrix::zeros(*p, *p);
                for i in 0..*p {
                    m[(i, i)] = T::from_real(s);
                    if i + 1 < *p {
                        let v = *rho * T::from_real(s);
                        m[(i, i + 1)] = v;
                        m[(i + 1, i)] = v.conjugate();
                    }
                }
                m
            }
            Self::Spiked { low_rank, alpha } => {
                let mut m = low_rank.clone();
                let a = T::from_real(*alpha);
                for i in 0..m.nrows() {
                    m[(i, i)] += a;
                }
                m
            }
            Self::Explicit { matrix } => matrix.clone(),
        };
        Ok(m)
    }

    /// Average eigenvalue `tr(M)/p`, the scale of the model.
    pub fn scale(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Self::Ar1 { sigma2, .. }
            | Self::CompoundSymmetry { sigma2, .. }
            | Self::Banded1 { sigma2, .. } => *sigma2,
            Self::Spiked { low_rank, alpha } => {
                alpha + low_rank.diagonal().iter().map(|x| x.real()).sum::<f64>()
                    / low_rank.nrows() as f64
            }
            Self::Explicit { matrix } => {
                matrix.diagonal().iter().map(|x| x.real()).sum::<f64>() / matrix.nrows() as f64
            }
        })
    }

    /// Sphericity `p * tr(M^2) / tr(M)^2`, in closed form where the family
    /// admits one. It lives in `[1, p]`, equals 1 exactly for multiples of
    /// the identity, and does not depend on `sigma2`.
    ///
    /// The spiked family has no usable closed form (it depends on the whole
    /// spectrum of the low-rank part); materialize it and use an `Explicit`
    /// model instead.
    pub fn sphericity_closed_form(&self) -> Result<f64> {
        self.validate()?;
        let pf = self.p() as f64;
        match self {
            Self::Ar1 { p, rho, .. } => {
                let r2 = rho.modulus_squared();
                if r2 == 0.0 {
                    return Ok(1.0);
                }
                let num = pf - pf * r2 * r2 - 2.0 * r2 + 2.0 * r2.powi(*p as i32 + 1);
                let den = pf * (r2 - 1.0) * (r2 - 1.0);
                Ok(num / den)
            }
            Self::CompoundSymmetry { rho, .. } => Ok(1.0 + (pf - 1.0) * rho * rho),
            Self::Banded1 { rho, .. } => Ok(1.0 + 2.0 * (1.0 - 1.0 / pf) * rho.modulus_squared()),
            Self::Spiked { .. } => Err(Error::UnsupportedClosedForm("spiked")),
            Self::Explicit { matrix } => {
                let tr: f64 = matrix.diagonal().iter().map(|x| x.real()).sum();
                let tr_sq = matrix.iter().map(|x| x.modulus_squared()).sum::<f64>();
                Ok(pf * tr_sq / (tr * tr))
            }
        }
    }

    /// Same family and variance with the correlation parameter replaced; the
    /// Monte Carlo runners use this to redraw correlations per trial. Only
    /// the correlation families support it.
    pub fn with_correlation(&self, rho: f64) -> Result<Self> {
        let out = match self {
            Self::Ar1 { p, sigma2, .. } => Self::Ar1 { p: *p, sigma2: *sigma2, rho: T::from_real(rho) },
            Self::CompoundSymmetry { p, sigma2, .. } => {
                Self::CompoundSymmetry { p: *p, sigma2: *sigma2, rho }
            }
            Self::Banded1 { p, sigma2, .. } => {
                Self::Banded1 { p: *p, sigma2: *sigma2, rho: T::from_real(rho) }
            }
            Self::Spiked { .. } | Self::Explicit { .. } => {
                return Err(Error::InvalidInput(format!(
                    "the {} family has no correlation parameter to replace",
                    self.family_name()
                )));
            }
        };
        out.validate()?;
        Ok(out)
    }
}

/// Distribution family of the elliptical law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionFamily {
    /// Gaussian over the scalar field; the complex instantiation is the
    /// circularly symmetric complex normal.
    Gaussian,
    /// Elliptical t built as a Gaussian vector times an independent radial
    /// factor `sqrt((nu - 2) / s)` with `s ~ chi-squared(nu)`. The factor is
    /// normalized so the covariance equals the model exactly; `nu > 4`
    /// guarantees finite fourth moments, with elliptical kurtosis
    /// `2 / (nu - 4)` over both fields.
    StudentT { nu: f64 },
}

impl DistributionFamily {
    fn validate(self) -> Result<()> {
        if let Self::StudentT { nu } = self {
            if !(nu > 4.0 && nu.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "student-t requires nu > 4 for finite fourth moments, got {nu}"
                )));
            }
        }
        Ok(())
    }

    /// Population elliptical kurtosis of the law.
    pub fn elliptical_kurtosis(self) -> f64 {
        match self {
            Self::Gaussian => 0.0,
            Self::StudentT { nu } => 2.0 / (nu - 4.0),
        }
    }
}

/// A fully specified sampling law: distribution family, mean vector, and
/// covariance model.
#[derive(Debug, Clone)]
pub struct EllipticalLaw<T: Scalar> {
    pub family: DistributionFamily,
    pub mean: DVector<T>,
    pub covariance: CovarianceModel<T>,
}

impl<T: Scalar> EllipticalLaw<T> {
    pub fn new(
        family: DistributionFamily,
        mean: DVector<T>,
        covariance: CovarianceModel<T>,
    ) -> Result<Self> {
        family.validate()?;
        covariance.validate()?;
        if mean.len() != covariance.p() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {} but the covariance has dimension {}",
                mean.len(),
                covariance.p()
            )));
        }
        Ok(Self { family, mean, covariance })
    }

    /// Zero-mean law.
    pub fn centered(family: DistributionFamily, covariance: CovarianceModel<T>) -> Result<Self> {
        let p = covariance.p();
        Self::new(family, DVector::zeros(p), covariance)
    }

    pub fn p(&self) -> usize {
        self.covariance.p()
    }

    /// Precomputes the matrix square root so repeated draws are just a
    /// matrix product.
    pub fn sampler(&self) -> Result<Sampler<T>> {
        let m = self.covariance.materialize()?;
        let root = linalg::hermitian_sqrt(&m)?;
        Ok(Sampler {
            family: self.family,
            mean: self.mean.clone(),
            // Rows of the sample matrix are observations: x^T = z^T A^T, so
            // the transposed square root is what multiplies from the right.
            sqrt_cov_t: root.transpose(),
        })
    }

    /// Draws `n` observations as the rows of a dataset.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset<T>> {
        self.sampler()?.draw_dataset(n, rng)
    }
}

/// Reusable sampling engine for one law.
#[derive(Debug, Clone)]
pub struct Sampler<T: Scalar> {
    family: DistributionFamily,
    mean: DVector<T>,
    sqrt_cov_t: DMatrix<T>,
}

impl<T: Scalar> Sampler<T> {
    pub fn p(&self) -> usize {
        self.mean.len()
    }

    /// Draws an `n x p` matrix whose rows are independent observations.
    ///
    /// The RNG consumption order is fixed: all `n * p` standardized entries
    /// first (column-major), then the `n` radial factors when the family is
    /// heavy-tailed. Reproducibility across runs relies on this layout.
    pub fn draw_matrix<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<T>> {
        let p = self.p();
        let z = DMatrix::from_fn(n, p, |_, _| T::standard_entry(rng));
        let mut x = z * &self.sqrt_cov_t;
        if let DistributionFamily::StudentT { nu } = self.family {
            let chi = ChiSquared::new(nu)
                .map_err(|e| Error::InvalidModel(format!("chi-squared({nu}): {e}")))?;
            for i in 0..n {
                let s: f64 = chi.sample(rng);
                if s <= 0.0 {
                    return Err(Error::Numerical("chi-squared draw was not positive".into()));
                }
                let factor = ((nu - 2.0) / s).sqrt();
                x.row_mut(i).scale_mut(factor);
            }
        }
        for j in 0..p {
            let m = self.mean[j];
            if m != T::zero() {
                x.column_mut(j).add_scalar_mut(m);
            }
        }
        Ok(x)
    }

    /// Draws a dataset of `n` observations (at least 1).
    pub fn draw_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset<T>> {
        if n == 0 {
            return Err(Error::InsufficientData("cannot draw an empty sample".into()));
        }
        Dataset::new(self.draw_matrix(n, rng)?)
    }
}
