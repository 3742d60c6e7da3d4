//! Dense row-major matrices and a one-sided Jacobi singular value decomposition.
//!
//! The Jacobi method is slower than bidiagonalization-based SVDs but computes
//! small singular values to high relative accuracy, which matters when the
//! spectrum is squared and fed into log-domain fits.

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(rows: usize, cols: usize, diag: &[T]) -> Self {
        Self::from_fn(rows, cols, |i, j| if i == j && i < diag.len() { diag[i] } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn min_dim(&self) -> usize {
        self.rows.min(self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape(format!(
                "cannot subtract {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Sum of squared entries.
    pub fn frobenius_norm_sq(&self) -> T {
        compensated_sum(self.data.iter().map(|&v| v * v))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Singular value decomposition `W = U diag(s) Vᵀ` with `s` descending.
    pub fn svd(&self) -> Result<Svd<T>> {
        jacobi_svd(self, true)
    }

    /// Singular values only, descending.
    pub fn singular_values(&self) -> Result<Vec<T>> {
        jacobi_svd(self, false).map(|svd| svd.singular_values)
    }
}

/// Thin SVD: `u` is `rows × k`, `v` is `cols × k`, `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Real> Svd<T> {
    /// Reconstructs `Σ_{i<k} σᵢ uᵢ vᵢᵀ` from the leading `k` triplets.
    pub fn reconstruct(&self, k: usize) -> Matrix<T> {
        let k = k.min(self.singular_values.len());
        let (n, m) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(n, m);
        for t in 0..k {
            let s = self.singular_values[t];
            if s == T::zero() {
                continue;
            }
            for i in 0..n {
                let us = self.u.get(i, t) * s;
                if us == T::zero() {
                    continue;
                }
                let row = &mut out.as_mut_slice()[i * m..(i + 1) * m];
                for (j, o) in row.iter_mut().enumerate() {
                    *o = *o + us * self.v.get(j, t);
                }
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 80;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn rotate<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// One-sided (Hestenes) Jacobi SVD. Orthogonalizes the columns of the tall
/// orientation of `w`; transposes back at the end when `w` is wide.
fn jacobi_svd<T: Real>(w: &Matrix<T>, want_vectors: bool) -> Result<Svd<T>> {
    if !w.is_finite() {
        return Err(Error::Numeric("matrix contains non-finite entries".into()));
    }
    let wide = w.rows < w.cols;
    let (m, n) = if wide { (w.cols, w.rows) } else { (w.rows, w.cols) };
    // Columns of the tall orientation A (m × n).
    let mut a: Vec<Vec<T>> =
        (0..n).map(|j| (0..m).map(|i| if wide { w.get(j, i) } else { w.get(i, j) }).collect()).collect();
    let mut v: Vec<Vec<T>> = if want_vectors {
        (0..n).map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect()).collect()
    } else {
        Vec::new()
    };

    let eps = T::epsilon();
    let tiny = T::min_positive_value();
    // Columns below this squared norm are numerically zero and left alone.
    let negligible = eps * eps * a.iter().map(|col| dot(col, col)).fold(T::zero(), |x, y| x + y);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma.abs() < tiny {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::c(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                if want_vectors {
                    rotate(&mut v, p, q, c, s);
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<T> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    let singular_values: Vec<T> = order.iter().map(|&i| norms[i]).collect();

    if !want_vectors {
        return Ok(Svd { u: Matrix::zeros(0, 0), singular_values, v: Matrix::zeros(0, 0) });
    }

    // Left vectors of A (m × n) and right vectors of A (n × n).
    let left = Matrix::from_fn(m, n, |i, t| {
        let j = order[t];
        if norms[j] > T::zero() {
            a[j][i] / norms[j]
        } else {
            T::zero()
        }
    });
    let right = Matrix::from_fn(n, n, |i, t| v[order[t]][i]);
    let (u, v) = if wide { (right, left) } else { (left, right) };
    Ok(Svd { u, singular_values, v })
}
