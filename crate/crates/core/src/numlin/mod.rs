//! Dense linear algebra for generator extraction: general real
//! eigendecomposition, principal logarithm, matrix exponential and powers.

mod eigen;
mod expm;
mod matrix;

use num_complex::Complex64;
use thiserror::Error;

pub use eigen::{eig, eig_with_tolerance, EigenDecomposition, DEFAULT_RECONSTRUCTION_TOL};
pub use expm::matrix_exp;
pub use matrix::{ComplexMatrix, RealMatrix};

/// Eigenvalues with `|Im λ|` below this and negative real part have no real logarithm.
pub const NEGATIVE_AXIS_IMAG_TOL: f64 = 1e-9;
/// Eigenvalues with modulus below this are treated as zero.
pub const SINGULAR_MODULUS_TOL: f64 = 1e-12;
/// Allowed `‖Im(V log Λ V⁻¹)‖_F / ‖D‖_F`.
pub const IMAGINARY_RESIDUE_TOL: f64 = 1e-8;
/// Allowed `‖exp(D) − K‖_F / ‖K‖_F` after taking the logarithm.
pub const LOG_ROUND_TRIP_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is numerically singular")]
    Singular,
    #[error("QR iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("eigendecomposition is ill-conditioned (relative residual {residual:e})")]
    IllConditioned { residual: f64 },
    #[error("eigenvalue {0} lies on the closed negative real axis; no real logarithm")]
    NegativeRealEigenvalue(Complex64),
    #[error("eigenvalue {0} is numerically zero; logarithm undefined")]
    SingularEigenvalue(Complex64),
    #[error("logarithm has imaginary residue {0:e} relative to its real part")]
    ImaginaryResidue(f64),
    #[error("intermediate value overflowed")]
    Overflow,
}

/// Principal branch: `ln r + iφ` with `φ ∈ (−π, π]`.
fn principal_scalar_log(z: Complex64) -> Complex64 {
    Complex64::new(z.norm().ln(), z.arg())
}

/// Real principal logarithm `D = Re(V log(Λ) V⁻¹)` of the decomposed matrix.
///
/// Fails when an eigenvalue sits on the closed negative real axis (no real
/// logarithm is guaranteed), is numerically zero, or when the eigenbasis is
/// too ill-conditioned for `exp(D)` to reproduce the input.
pub fn principal_log(decomp: &EigenDecomposition) -> Result<RealMatrix, LinalgError> {
    for &l in &decomp.eigenvalues {
        if l.norm() < SINGULAR_MODULUS_TOL {
            return Err(LinalgError::SingularEigenvalue(l));
        }
        if l.im.abs() < NEGATIVE_AXIS_IMAG_TOL && l.re < 0.0 {
            return Err(LinalgError::NegativeRealEigenvalue(l));
        }
    }
    let logs: Vec<Complex64> = decomp
        .eigenvalues
        .iter()
        .map(|&l| principal_scalar_log(l))
        .collect();
    let v = &decomp.eigenvectors;
    let v_inv = v.inverse()?;
    let full = v.scale_columns(&logs).matmul(&v_inv);
    let d = full.re();
    let d_norm = d.frobenius_norm();
    let im_norm = full.im().frobenius_norm();
    if im_norm > IMAGINARY_RESIDUE_TOL * d_norm.max(f64::MIN_POSITIVE) && im_norm > 1e-14 {
        return Err(LinalgError::ImaginaryResidue(
            im_norm / d_norm.max(f64::MIN_POSITIVE),
        ));
    }
    let k = decomp.matrix();
    let back = matrix_exp(&d, 1.0)?;
    let residual = back.sub(k).frobenius_norm() / k.frobenius_norm();
    if residual > LOG_ROUND_TRIP_TOL {
        return Err(LinalgError::IllConditioned { residual });
    }
    Ok(d)
}

/// `K^p` by binary powering; `K⁰ = I`.
pub fn matrix_power(k: &RealMatrix, p: u32) -> RealMatrix {
    assert!(k.is_square(), "matrix_power needs a square matrix");
    let mut result = RealMatrix::identity(k.rows());
    let mut base = k.clone();
    let mut e = p;
    while e > 0 {
        if e & 1 == 1 {
            result = result.matmul(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.matmul(&base);
        }
    }
    result
}

/// Orthogonality defect `‖KKᵀ − I‖_F²`.
pub fn orth_defect(k: &RealMatrix) -> f64 {
    assert!(k.is_square(), "orth_defect needs a square matrix");
    let g = k.matmul(&k.transpose());
    let n = k.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let e = g[(i, j)] - if i == j { 1.0 } else { 0.0 };
            s += e * e;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn rel(a: &RealMatrix, b: &RealMatrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn log_of_identity_is_zero() {
        let d = principal_log(&eig(&RealMatrix::identity(4)).unwrap()).unwrap();
        assert!(d.frobenius_norm() < 1e-15);
    }

    #[test]
    fn log_of_quarter_turn() {
        let k = RealMatrix::rotation(PI / 2.0);
        let d = principal_log(&eig(&k).unwrap()).unwrap();
        let want = RealMatrix::from_rows(&[vec![0.0, -PI / 2.0], vec![PI / 2.0, 0.0]]).unwrap();
        assert!(d.sub(&want).frobenius_norm() < 1e-14, "{d:?}");
        assert!(rel(&matrix_exp(&d, 1.0).unwrap(), &k) < 1e-14);
    }

    #[test]
    fn log_of_scalar_diagonal() {
        let k = RealMatrix::from_diag(&[E, E * E]);
        let d = principal_log(&eig(&k).unwrap()).unwrap();
        assert!(d.sub(&RealMatrix::from_diag(&[1.0, 2.0])).frobenius_norm() < 1e-14);
    }

    #[test]
    fn negative_real_eigenvalue_is_rejected() {
        let k = RealMatrix::from_diag(&[-1.0, 1.0]);
        assert!(matches!(
            principal_log(&eig(&k).unwrap()),
            Err(LinalgError::NegativeRealEigenvalue(_))
        ));
        // Half-turn rotation has the double eigenvalue −1.
        let k = RealMatrix::rotation(PI);
        assert!(matches!(
            principal_log(&eig(&k).unwrap()),
            Err(LinalgError::NegativeRealEigenvalue(_))
        ));
    }

    #[test]
    fn zero_eigenvalue_is_rejected() {
        let k = RealMatrix::from_diag(&[0.0, 1.0]);
        assert!(matches!(
            principal_log(&eig(&k).unwrap()),
            Err(LinalgError::SingularEigenvalue(_))
        ));
    }

    #[test]
    fn powers() {
        assert_eq!(
            matrix_power(&RealMatrix::from_diag(&[2.0, 3.0]), 0),
            RealMatrix::identity(2)
        );
        assert_eq!(
            matrix_power(&RealMatrix::from_diag(&[2.0, 3.0]), 2),
            RealMatrix::from_diag(&[4.0, 9.0])
        );
        let r = matrix_power(&RealMatrix::rotation(PI / 8.0), 4);
        assert!(rel(&r, &RealMatrix::rotation(PI / 2.0)) < 1e-15);
    }

    #[test]
    fn orth_defect_values() {
        assert_eq!(orth_defect(&RealMatrix::identity(3)), 0.0);
        assert!((orth_defect(&RealMatrix::identity(2).scale(2.0)) - 18.0).abs() < 1e-12);
        for theta in [0.1, 1.0, 2.5, -3.0] {
            assert!(orth_defect(&RealMatrix::rotation(theta)) <= 1e-24 * 4.0 + 1e-30);
        }
    }
}
