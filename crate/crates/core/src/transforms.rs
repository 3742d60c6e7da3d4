//! Weight transforms: low-rank SVD smoothing (shape) and quantile clipping (scale).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model_store::{assemble_tensor, ModelBundle, WeightMatrix};
use crate::scalar::Real;

pub const DEFAULT_CLIP_LO: f64 = 0.005;
pub const DEFAULT_CLIP_HI: f64 = 0.995;

/// Number of singular triplets kept: `ceil(keep_frac · min_dim)`.
///
/// The product is nudged down by 1e-9 first so that e.g. `0.1 · 30` (which
/// evaluates to 3.0000000000000004) keeps 3, not 4.
pub fn kept_rank(keep_frac: f64, min_dim: usize) -> Result<usize> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::Domain(format!("keep_frac must be in (0, 1], got {keep_frac}")));
    }
    Ok(((keep_frac * min_dim as f64 - 1e-9).ceil() as usize).clamp(1, min_dim.max(1)))
}

/// Best rank-k approximation `Σ_{i≤k} σᵢ uᵢ vᵢᵀ` with `k` from [`kept_rank`].
/// At full rank the approximation is `W` itself and is returned unchanged.
pub fn svd_smooth<T: Real>(w: &WeightMatrix<T>, keep_frac: f64) -> Result<WeightMatrix<T>> {
    let k = kept_rank(keep_frac, w.matrix.min_dim())?;
    if k >= w.matrix.min_dim() {
        return Ok(w.clone());
    }
    let svd = w.matrix.svd().map_err(|e| Error::Numeric(format!("{}: {e}", w.id())))?;
    Ok(w.with_matrix(svd.reconstruct(k)))
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::c(pos - lo as f64);
    if frac == T::zero() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Clamps every element into `[Q(lo_q), Q(hi_q)]` of the matrix's own
/// elementwise distribution. Elements already inside are left untouched.
pub fn clip_extremes<T: Real>(w: &WeightMatrix<T>, lo_q: f64, hi_q: f64) -> Result<WeightMatrix<T>> {
    if !(0.0..=1.0).contains(&lo_q) || !(0.0..=1.0).contains(&hi_q) || lo_q >= hi_q {
        return Err(Error::Domain(format!("need 0 <= lo_q < hi_q <= 1, got ({lo_q}, {hi_q})")));
    }
    let values = w.matrix.as_slice();
    if values.is_empty() {
        return Ok(w.clone());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let (lo, hi) = (quantile_sorted(&sorted, lo_q), quantile_sorted(&sorted, hi_q));
    let clipped = values
        .iter()
        .map(|&v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
        .collect();
    Ok(w.with_matrix(Matrix::new(w.rows(), w.cols(), clipped)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Svd { keep_frac: f64 },
    Clip { lo_q: f64, hi_q: f64 },
}

impl Transform {
    pub const SVD10: Transform = Transform::Svd { keep_frac: 0.1 };
    pub const SVD20: Transform = Transform::Svd { keep_frac: 0.2 };
    pub const CLIP: Transform = Transform::Clip { lo_q: DEFAULT_CLIP_LO, hi_q: DEFAULT_CLIP_HI };

    pub fn apply<T: Real>(&self, w: &WeightMatrix<T>) -> Result<WeightMatrix<T>> {
        match *self {
            Transform::Svd { keep_frac } => svd_smooth(w, keep_frac),
            Transform::Clip { lo_q, hi_q } => clip_extremes(w, lo_q, hi_q),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::Svd { keep_frac } => write!(f, "svd(keep_frac={keep_frac})"),
            Transform::Clip { lo_q, hi_q } => write!(f, "clip(lo_q={lo_q}, hi_q={hi_q})"),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd10" => Ok(Transform::SVD10),
            "svd20" => Ok(Transform::SVD20),
            "clip" => Ok(Transform::CLIP),
            other => Err(Error::Usage(format!("unknown transform {other:?} (expected svd10, svd20 or clip)"))),
        }
    }
}

/// Applies `transform` to every extracted matrix (conv slices independently)
/// and reassembles the layers. Metadata is kept; accuracies are cleared since
/// they no longer describe the transformed weights.
pub fn transform_model(bundle: &ModelBundle, transform: Transform) -> Result<ModelBundle> {
    let mut out = bundle.clone();
    out.train_acc = None;
    out.test_acc = None;
    for layer in out.layers.iter_mut() {
        let matrices = layer.matrices()?;
        let transformed = matrices.par_iter().map(|m| transform.apply(m)).collect::<Result<Vec<_>>>()?;
        layer.weights = assemble_tensor(&layer.spec, &transformed)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wm(m: Matrix<f64>) -> WeightMatrix<f64> {
        WeightMatrix::new("w", 0, m).unwrap()
    }

    #[test]
    fn rank_rounding() {
        assert_eq!(kept_rank(0.1, 10).unwrap(), 1);
        assert_eq!(kept_rank(0.1, 30).unwrap(), 3);
        assert_eq!(kept_rank(0.2, 64).unwrap(), 13);
        assert_eq!(kept_rank(0.01, 5).unwrap(), 1);
        assert_eq!(kept_rank(1.0, 7).unwrap(), 7);
        assert!(kept_rank(0.0, 7).is_err());
        assert!(kept_rank(1.5, 7).is_err());
        assert!(kept_rank(f64::NAN, 7).is_err());
    }

    #[test]
    fn full_rank_reproduces() {
        let w = wm(Matrix::from_fn(7, 5, |i, j| ((i * 5 + j) as f64).sin()));
        assert_eq!(svd_smooth(&w, 1.0).unwrap(), w);
        let svd = w.matrix.svd().unwrap();
        let err = svd.reconstruct(5).sub(&w.matrix).unwrap().frobenius_norm_sq().sqrt();
        assert!(err <= 1e-12 * w.matrix.frobenius_norm_sq().sqrt());
    }

    #[test]
    fn rank_one_is_exact() {
        let u: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let v: Vec<f64> = (0..12).map(|j| (j as f64 * 0.3).cos()).collect();
        let w = wm(Matrix::from_fn(10, 12, |i, j| u[i] * v[j]));
        let s = svd_smooth(&w, 0.1).unwrap();
        let err = s.matrix.sub(&w.matrix).unwrap().frobenius_norm_sq().sqrt();
        assert!(err <= 1e-10 * w.matrix.frobenius_norm_sq().sqrt(), "{err}");
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    }

    #[test]
    fn clip_full_range_is_identity() {
        let w = wm(Matrix::from_fn(6, 6, |i, j| (i as f64 - j as f64) * 0.37));
        assert_eq!(clip_extremes(&w, 0.0, 1.0).unwrap(), w);
    }

    #[test]
    fn clip_tames_outlier() {
        let mut m = Matrix::from_fn(10, 10, |i, j| ((i * 10 + j) as f64 / 99.0) * 2.0 - 1.0);
        m.set(3, 3, 1e6);
        let c = clip_extremes(&wm(m), 0.0, 0.98).unwrap();
        assert!(c.matrix.get(3, 3) <= 1.0);
        assert!(c.matrix.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn clip_rejects_bad_quantiles() {
        let w = wm(Matrix::identity(2));
        assert!(clip_extremes(&w, 0.6, 0.4).is_err());
        assert!(clip_extremes(&w, -0.1, 0.4).is_err());
        assert!(clip_extremes(&w, 0.5, 0.5).is_err());
    }

    #[test]
    fn parse_transforms() {
        assert_eq!("svd10".parse::<Transform>().unwrap(), Transform::SVD10);
        assert_eq!("clip".parse::<Transform>().unwrap(), Transform::CLIP);
        assert!("svd30".parse::<Transform>().is_err());
    }
}
