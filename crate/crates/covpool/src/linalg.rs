//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative tolerance used when checking structural properties (symmetry,
/// eigenvalue signs) of matrices that are exact in theory but carry
/// round-off in practice.
pub(crate) const STRUCT_TOL: f64 = 1e-10;

/// Returns true when `m` is square and Hermitian up to `tol` times its
/// largest entry modulus.
pub(crate) fn is_hermitian<T: Scalar>(m: &DMatrix<T>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.modulus()));
    if scale == 0.0 {
        return true;
    }
    for j in 0..m.ncols() {
        for i in 0..=j {
            let diff = (m[(i, j)] - m[(j, i)].conjugate()).modulus();
            if diff > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Replaces `m` with its Hermitian part `(m + m^H)/2`, squashing round-off
/// drift after products that are Hermitian in exact arithmetic.
pub(crate) fn hermitianize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::from_real(0.5);
    for j in 0..m.ncols() {
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conjugate()) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conjugate();
        }
        let d = m[(j, j)];
        m[(j, j)] = T::from_real(d.real());
    }
}

/// Trace of the product of two Hermitian matrices, which is real:
/// `tr(AB) = sum_ij A_ij * conj(B_ij)`.
pub(crate) fn hermitian_product_trace<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (*x * y.conjugate()).real();
    }
    acc
}

/// Squared Frobenius distance between two matrices of equal shape.
pub(crate) fn frobenius_distance_sq<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (*x - *y).modulus_squared();
    }
    acc
}

/// Hermitian positive semidefinite square root via eigendecomposition.
///
/// Eigenvalues within round-off below zero are clamped to zero; anything
/// more negative than `-STRUCT_TOL` times the largest eigenvalue is an
/// error, because the input was supposed to be PSD.
pub(crate) fn hermitian_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !is_hermitian(m, STRUCT_TOL) {
        return Err(Error::InvalidInput(
            "matrix square root requires a Hermitian matrix".into(),
        ));
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    if max <= 0.0 {
        // The zero matrix is its own square root; anything else with
        // max <= 0 is negative definite.
        if eig.eigenvalues.iter().all(|&l| l.abs() == 0.0) {
            return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
        }
        return Err(Error::NotPositiveDefinite(
            "matrix has no positive eigenvalues".into(),
        ));
    }
    let floor = -STRUCT_TOL * max;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {lambda:.3e} is negative beyond round-off"
            )));
        }
        let root = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(root);
    }
    let mut out = &scaled * eig.eigenvectors.adjoint();
    hermitianize(&mut out);
    Ok(out)
}

/// Compensated (Neumaier) sum of a sequence of f64 values. Used wherever a
/// reduction order must be fixed and accurate regardless of how the terms
/// were produced.
pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex;

    type C64 = Complex<f64>;

    #[test]
    fn hermitian_checks() {
        let sym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(is_hermitian(&sym, 1e-12));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 1.0]);
        assert!(!is_hermitian(&asym, 1e-12));

        let herm = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.3, 0.4), C64::new(0.3, -0.4), C64::new(1.0, 0.0)],
        );
        assert!(is_hermitian(&herm, 1e-12));
        let not = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.3, 0.4), C64::new(0.3, 0.4), C64::new(1.0, 0.0)],
        );
        assert!(!is_hermitian(&not, 1e-12));
    }

    #[test]
    fn product_trace_matches_direct_trace() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.4, 0.0, 0.4, 0.7]);
        let direct = (&a * &b).trace();
        assert_relative_eq!(hermitian_product_trace(&a, &b), direct, epsilon = 1e-14);
    }

    #[test]
    fn complex_product_trace_is_real_part_of_trace() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.3, 0.4), C64::new(0.3, -0.4), C64::new(1.0, 0.0)],
        );
        let b = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(-0.2, 0.1), C64::new(-0.2, -0.1), C64::new(3.0, 0.0)],
        );
        let direct = (&a * &b).trace();
        assert!(direct.im.abs() < 1e-14);
        assert_relative_eq!(hermitian_product_trace(&a, &b), direct.re, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let root = hermitian_sqrt(&m).unwrap();
        let back = &root * &root;
        assert_relative_eq!(frobenius_distance_sq(&back, &m).sqrt(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn sqrt_clamps_tiny_negative_eigenvalues() {
        // Rank-1 PSD matrix; round-off puts one eigenvalue slightly below 0.
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let root = hermitian_sqrt(&m).unwrap();
        let back = &root * &root;
        assert_relative_eq!(frobenius_distance_sq(&back, &m).sqrt(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(hermitian_sqrt(&m).is_err());
    }

    #[test]
    fn neumaier_handles_cancellation() {
        let vals = vec![1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(vals), 2.0);
    }
}
