//! Dense linear-algebra helpers for the small matrices used by kernels and
//! jump measures: matrix exponential, spectral abscissa, operator norms and
//! a PSD square root for Gaussian covariance factors.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Matrix exponential by scaling-and-squaring with a fixed-order diagonal
/// Padé core. The argument is scaled until its 1-norm is at most 1/2.
pub fn matexp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "matexp needs a square matrix");
    let norm = one_norm(a);
    let squarings = if norm <= 0.5 { 0 } else { (norm / 0.5).log2().ceil() as u32 };
    let scaled = a * 2f64.powi(-(squarings as i32));
    let mut result = pade6(&scaled);
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Diagonal Padé(6,6) approximant of exp at a matrix with small norm.
fn pade6(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let c = [1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];
    let id = DMatrix::identity(d, d);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    // p(A) = even + odd, q(A) = even - odd.
    let odd = a * (&a4 * c[5] + &a2 * c[3] + &id * c[1]);
    let even = &a6 * c[6] + &a4 * c[4] + &a2 * c[2] + &id * c[0];
    let num = &even + &odd;
    let den = &even - &odd;
    den.lu().solve(&num).expect("Padé denominator is invertible for scaled arguments")
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Smallest singular value.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Factor a positive semidefinite matrix as `B Bᵀ`.
///
/// Uses Cholesky when the matrix is definite and falls back to an
/// eigendecomposition with negative eigenvalues clipped at zero.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = s.nrows();
    if s.ncols() != d {
        return Err(Error::DimMismatch("covariance must be square".into()));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + s.abs().max()) {
        return Err(Error::invalid("gaussian", "covariance must be symmetric"));
    }
    if let Some(chol) = s.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = s.clone().symmetric_eigen();
    let mut b = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam < -1e-10 * (1.0 + s.abs().max()) {
            return Err(Error::invalid("gaussian", "covariance must be positive semidefinite"));
        }
        let scale = lam.max(0.0).sqrt();
        for i in 0..d {
            b[(i, j)] *= scale;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matexp_matches_scalar_series() {
        let a = DMatrix::from_row_slice(1, 1, &[-0.7]);
        assert_abs_diff_eq!(matexp(&a)[(0, 0)], (-0.7f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn matexp_matches_diagonalisable_case() {
        // A = [[-1, 2], [0, -3]]: e^{At} = [[e^{-t}, e^{-t}-e^{-3t}], [0, e^{-3t}]]
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let t = 0.37;
        let e = matexp(&(&a * t));
        assert_abs_diff_eq!(e[(0, 0)], (-t).exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(e[(0, 1)], (-t).exp() - (-3.0 * t).exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(e[(1, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(1, 1)], (-3.0 * t).exp(), epsilon = 1e-13);
    }

    #[test]
    fn matexp_of_rotation_preserves_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        let e = matexp(&a);
        // Orthogonal: columns have unit norm.
        assert_abs_diff_eq!(e.column(0).norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[(0, 0)], 3.0f64.cos(), epsilon = 1e-12);
    }

    #[test]
    fn abscissa_and_norms() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        assert_abs_diff_eq!(spectral_abscissa(&a), -1.0, epsilon = 1e-10);
        assert!(op_norm(&a) >= 2.0);
        assert!(sigma_min(&a) > 0.0);
    }

    #[test]
    fn psd_factor_reproduces_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let b = psd_factor(&s).unwrap();
        let back = &b * b.transpose();
        assert_abs_diff_eq!((back - s).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn psd_factor_accepts_singular_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = psd_factor(&s).unwrap();
        let back = &b * b.transpose();
        assert_abs_diff_eq!((back - s).abs().max(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_factor(&s).is_err());
    }
}
