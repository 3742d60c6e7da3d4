//! Empirical spectral density of `X = WᵀW` and the norms derived from it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model_store::WeightMatrix;
use crate::scalar::{compensated_sum, Real};

/// Eigenvalues below `ZERO_CLAMP · λ_max` are treated as exact zeros.
pub const ZERO_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatrixId {
    pub owner_layer: String,
    pub slice_index: usize,
}

/// Ascending eigenvalues of `WᵀW` (squared singular values of `W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub eigenvalues: Vec<T>,
    pub source: MatrixId,
}

impl<T: Real> Spectrum<T> {
    /// Builds a spectrum from raw eigenvalues: sorts ascending and clamps
    /// negligible values to zero.
    pub fn from_eigenvalues(mut eigenvalues: Vec<T>, source: MatrixId) -> Result<Self> {
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Domain("eigenvalues must be finite and non-negative".into()));
        }
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if let Some(&max) = eigenvalues.last() {
            let floor = max * T::c(ZERO_CLAMP);
            for v in eigenvalues.iter_mut() {
                if *v < floor {
                    *v = T::zero();
                }
            }
        }
        Ok(Self { eigenvalues, source })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Strictly positive eigenvalues, ascending.
    pub fn positive(&self) -> &[T] {
        let first = self.eigenvalues.partition_point(|&v| v <= T::zero());
        &self.eigenvalues[first..]
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { eigenvalues: self.eigenvalues.iter().map(|&v| v * c).collect(), source: self.source.clone() }
    }
}

/// ESD of a weight matrix, computed from its singular values.
pub fn esd<T: Real>(w: &WeightMatrix<T>) -> Result<Spectrum<T>> {
    let source = MatrixId { owner_layer: w.owner_layer.clone(), slice_index: w.slice_index };
    let sv = w.matrix.singular_values().map_err(|e| Error::Numeric(format!("{}: {e}", w.id())))?;
    Spectrum::from_eigenvalues(sv.into_iter().map(|s| s * s).collect(), source)
}

/// `λ_max = ‖W‖₂²`.
pub fn spectral_norm_sq<T: Real>(e: &Spectrum<T>) -> Result<T> {
    e.eigenvalues.last().copied().ok_or_else(|| Error::Domain("empty spectrum".into()))
}

/// `‖W‖_F² = Σ λᵢ`.
pub fn frobenius_norm_sq<T: Real>(e: &Spectrum<T>) -> Result<T> {
    if e.is_empty() {
        return Err(Error::Domain("empty spectrum".into()));
    }
    Ok(compensated_sum(e.eigenvalues.iter().copied()))
}

fn check_exponent<T: Real>(a: T) -> Result<()> {
    if !(a.is_finite() && a > T::zero()) {
        return Err(Error::Domain(format!("Schatten exponent must be finite and positive, got {a}")));
    }
    Ok(())
}

/// `Σ λᵢᵃ` over strictly positive eigenvalues (`‖X‖ₐᵃ`, i.e. `‖W‖₂ₐ²ᵃ`).
pub fn shatten_norm_sum<T: Real>(e: &Spectrum<T>, a: T) -> Result<T> {
    check_exponent(a)?;
    Ok(compensated_sum(e.positive().iter().map(|&v| v.powf(a))))
}

/// `log₁₀ Σ λᵢᵃ`, evaluated with a log-sum-exp shift so that large exponents
/// do not overflow. Returns `None` if there are no positive eigenvalues.
pub fn log10_shatten_norm_sum<T: Real>(e: &Spectrum<T>, a: T) -> Result<Option<T>> {
    check_exponent(a)?;
    let pos = e.positive();
    let Some(&max) = pos.last() else {
        return Ok(None);
    };
    let ln_max = max.ln();
    let rest = compensated_sum(pos.iter().map(|&v| (a * (v.ln() - ln_max)).exp()));
    Ok(Some((a * ln_max + rest.ln()) / T::LN_10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn wm(m: Matrix<f64>) -> WeightMatrix<f64> {
        WeightMatrix::new("w", 0, m).unwrap()
    }

    fn spec(v: &[f64]) -> Spectrum<f64> {
        Spectrum::from_eigenvalues(v.to_vec(), MatrixId { owner_layer: "w".into(), slice_index: 0 }).unwrap()
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(esd(&wm(Matrix::identity(3))).unwrap().eigenvalues, vec![1.0, 1.0, 1.0]);
        let d = esd(&wm(Matrix::from_diagonal(3, 3, &[1.0, 2.0, 3.0]))).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn norms_of_small_spectrum() {
        let e = spec(&[1.0, 4.0, 9.0]);
        assert_eq!(spectral_norm_sq(&e).unwrap(), 9.0);
        assert_eq!(frobenius_norm_sq(&e).unwrap(), 14.0);
        assert_eq!(shatten_norm_sum(&e, 1.0).unwrap(), 14.0);
        assert_eq!(shatten_norm_sum(&e, 0.5).unwrap(), 6.0);
        let l = log10_shatten_norm_sum(&e, 0.5).unwrap().unwrap();
        assert!((l - 6f64.log10()).abs() < 1e-14);
    }

    #[test]
    fn identity_norms() {
        let e = esd(&wm(Matrix::identity(3))).unwrap();
        assert_eq!(spectral_norm_sq(&e).unwrap(), 1.0);
        assert_eq!(frobenius_norm_sq(&e).unwrap(), 3.0);
    }

    #[test]
    fn domain_errors() {
        let empty = spec(&[]);
        assert!(spectral_norm_sq(&empty).is_err());
        assert!(frobenius_norm_sq(&empty).is_err());
        let e = spec(&[1.0]);
        assert!(shatten_norm_sum(&e, 0.0).is_err());
        assert!(shatten_norm_sum(&e, -1.0).is_err());
        assert!(shatten_norm_sum(&e, f64::NAN).is_err());
    }

    #[test]
    fn zeros_are_clamped_and_skipped() {
        let e = spec(&[4.0, 1e-14, 0.0, 1.0]);
        assert_eq!(e.eigenvalues, vec![0.0, 0.0, 1.0, 4.0]);
        assert_eq!(e.positive(), &[1.0, 4.0]);
        assert_eq!(shatten_norm_sum(&e, 2.0).unwrap(), 17.0);
        assert_eq!(log10_shatten_norm_sum(&spec(&[0.0]), 2.0).unwrap(), None);
    }

    #[test]
    fn rank_deficient_matrix_has_exact_zeros() {
        let w = Matrix::from_fn(12, 8, |i, j| (i as f64 + 1.0) * (j as f64 - 3.5));
        let e = esd(&wm(w)).unwrap();
        assert_eq!(e.positive().len(), 1);
    }

    #[test]
    fn log_shatten_does_not_overflow() {
        let e = spec(&[1e30, 2e30]);
        let l = log10_shatten_norm_sum(&e, 12.0).unwrap().unwrap();
        let expect = 360.0 + (1.0 + 2f64.powi(12)).log10();
        assert!((l - expect).abs() < 1e-10);
    }
}
