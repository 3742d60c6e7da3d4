//! Truncated power-law fitting of spectra.
//!
//! The density is `ρ(λ) ∝ λ^{-α}` on `[x_min, x_max]`. For a fixed `(x_min, x_max)`
//! the exponent is the maximum-likelihood estimate; `x_min` is chosen among the
//! observed eigenvalues by minimizing the Kolmogorov-Smirnov distance, and
//! `x_max` is pinned to `λ_max`.
//!
//! All internal arithmetic works on `ln(λ / x_min)` and `ln(x_max / x_min)`, so the
//! fitted exponent does not depend on the overall scale of the spectrum.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};
use crate::spectra::Spectrum;

pub const ALPHA_MIN: f64 = 1.01;
pub const ALPHA_MAX: f64 = 12.0;
pub const ALPHA_TOL: f64 = 1e-4;
pub const DEFAULT_MIN_TAIL: usize = 10;
/// Fits above this exponent describe very short tails and are flagged.
pub const HIGH_ALPHA: f64 = 6.0;
const UNIT_ALPHA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    TooFewTailPoints,
    AlphaAtSearchBound,
    DegenerateTail,
    HighAlpha,
}

impl FitWarning {
    pub fn as_str(self) -> &'static str {
        match self {
            FitWarning::TooFewTailPoints => "too_few_tail_points",
            FitWarning::AlphaAtSearchBound => "alpha_at_search_bound",
            FitWarning::DegenerateTail => "degenerate_tail",
            FitWarning::HighAlpha => "high_alpha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint<T> {
    pub x_min: T,
    pub alpha: T,
    pub d_ks: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit<T> {
    pub alpha: T,
    pub x_min: T,
    pub x_max: T,
    pub d_ks: T,
    pub n_tail: usize,
    pub scan: Vec<ScanPoint<T>>,
    pub warnings: Vec<FitWarning>,
}

impl<T: Real> PowerLawFit<T> {
    pub fn has_warning(&self, w: FitWarning) -> bool {
        self.warnings.contains(&w)
    }

    /// The KS-vs-x_min curve as CSV with header `x_min,alpha,d_ks`.
    pub fn scan_csv(&self) -> String {
        let mut out = String::from("x_min,alpha,d_ks\n");
        for p in &self.scan {
            let _ = writeln!(out, "{},{},{}", p.x_min, p.alpha, p.d_ks);
        }
        out
    }
}

fn check_range<T: Real>(x_min: T, x_max: T) -> Result<()> {
    if !(x_min.is_finite() && x_max.is_finite()) || x_min <= T::zero() {
        return Err(Error::Domain(format!("x_min must be positive and finite, got {x_min}")));
    }
    if x_min >= x_max {
        return Err(Error::Domain(format!("need x_min < x_max, got [{x_min}, {x_max}]")));
    }
    Ok(())
}

fn near_unit<T: Real>(alpha: T) -> bool {
    (alpha - T::one()).abs() < T::c(UNIT_ALPHA_EPS)
}

/// CDF in terms of `ln(x/x_min)` and `ln(x_max/x_min)`.
#[inline]
fn cdf_log<T: Real>(ln_t: T, ln_r: T, alpha: T) -> T {
    if near_unit(alpha) {
        ln_t / ln_r
    } else {
        let k = T::one() - alpha;
        (k * ln_t).exp_m1() / (k * ln_r).exp_m1()
    }
}

/// `ln ∫₁ʳ t^{-α} dt`.
#[inline]
fn ln_unit_normalizer<T: Real>(ln_r: T, alpha: T) -> T {
    if near_unit(alpha) {
        ln_r.ln()
    } else {
        let k = T::one() - alpha;
        ((k * ln_r).exp_m1() / k).ln()
    }
}

/// CDF of the truncated power law on `[x_min, x_max]`.
pub fn tpl_cdf<T: Real>(x: T, alpha: T, x_min: T, x_max: T) -> Result<T> {
    check_range(x_min, x_max)?;
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(x >= x_min && x <= x_max) {
        return Err(Error::Domain(format!("{x} outside [{x_min}, {x_max}]")));
    }
    let f = cdf_log((x / x_min).ln(), (x_max / x_min).ln(), alpha);
    Ok(f.max(T::zero()).min(T::one()))
}

/// Inverse CDF: maps `u ∈ [0, 1]` to `[x_min, x_max]`.
pub fn tpl_quantile<T: Real>(u: T, alpha: T, x_min: T, x_max: T) -> Result<T> {
    check_range(x_min, x_max)?;
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(u >= T::zero() && u <= T::one()) {
        return Err(Error::Domain(format!("probability {u} outside [0, 1]")));
    }
    if u == T::one() {
        return Ok(x_max);
    }
    let ln_r = (x_max / x_min).ln();
    let ln_t = if near_unit(alpha) {
        u * ln_r
    } else {
        let k = T::one() - alpha;
        (u * (k * ln_r).exp_m1()).ln_1p() / k
    };
    Ok((x_min * ln_t.exp()).max(x_min).min(x_max))
}

/// Log-likelihood of `tail` under the truncated power law.
pub fn tpl_log_likelihood<T: Real>(tail: &[T], alpha: T, x_min: T, x_max: T) -> Result<T> {
    check_tail(tail, x_min, x_max)?;
    let ln_xmin = x_min.ln();
    let sum_ln_t = compensated_sum(tail.iter().map(|&v| (v / x_min).ln()));
    Ok(likelihood(T::from_usize_lossy(tail.len()), sum_ln_t, (x_max / x_min).ln(), ln_xmin, alpha))
}

#[inline]
fn likelihood<T: Real>(n: T, sum_ln_t: T, ln_r: T, ln_xmin: T, alpha: T) -> T {
    -n * (ln_xmin + ln_unit_normalizer(ln_r, alpha)) - alpha * sum_ln_t
}

fn check_tail<T: Real>(tail: &[T], x_min: T, x_max: T) -> Result<()> {
    check_range(x_min, x_max)?;
    if tail.is_empty() {
        return Err(Error::Domain("empty tail".into()));
    }
    if let Some(v) = tail.iter().find(|&&v| !(v >= x_min && v <= x_max)) {
        return Err(Error::Domain(format!("tail value {v} outside [{x_min}, {x_max}]")));
    }
    Ok(())
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
fn golden_max<T: Real>(mut lo: T, mut hi: T, tol: T, f: impl Fn(T) -> T) -> T {
    let inv_phi = T::c((5f64.sqrt() - 1.0) / 2.0);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / T::c(2.0)
}

/// Maximizes the log-likelihood from its sufficient statistics.
fn mle_from_stats<T: Real>(n: usize, sum_ln_t: T, ln_r: T, ln_xmin: T) -> (T, Option<FitWarning>) {
    let n = T::from_usize_lossy(n);
    let (lo, hi, tol) = (T::c(ALPHA_MIN), T::c(ALPHA_MAX), T::c(ALPHA_TOL));
    let ll = |a: T| likelihood(n, sum_ln_t, ln_r, ln_xmin, a);
    let best = golden_max(lo, hi, tol, ll);
    let (l_best, l_lo, l_hi) = (ll(best), ll(lo), ll(hi));
    if hi - best <= tol || l_hi > l_best {
        (hi, Some(FitWarning::AlphaAtSearchBound))
    } else if best - lo <= tol || l_lo > l_best {
        (lo, Some(FitWarning::AlphaAtSearchBound))
    } else {
        (best, None)
    }
}

/// Maximum-likelihood exponent for a fixed `[x_min, x_max]`, searched over
/// `[ALPHA_MIN, ALPHA_MAX]`.
pub fn fit_alpha_mle<T: Real>(tail: &[T], x_min: T, x_max: T) -> Result<(T, Option<FitWarning>)> {
    check_tail(tail, x_min, x_max)?;
    let sum_ln_t = compensated_sum(tail.iter().map(|&v| (v / x_min).ln()));
    Ok(mle_from_stats(tail.len(), sum_ln_t, (x_max / x_min).ln(), x_min.ln()))
}

/// Two-sided KS statistic between the empirical CDF of sorted `ln(λ/x_min)` and the model CDF.
fn ks_from_logs<T: Real>(ln_t: &[T], ln_r: T, alpha: T) -> T {
    let n = T::from_usize_lossy(ln_t.len());
    let mut d = T::zero();
    for (i, &lt) in ln_t.iter().enumerate() {
        let f = cdf_log(lt, ln_r, alpha);
        let below = T::from_usize_lossy(i) / n;
        let above = T::from_usize_lossy(i + 1) / n;
        d = d.max((f - above).abs()).max((f - below).abs());
    }
    d
}

/// Exact two-sided KS distance between the empirical CDF of `tail` (sorted
/// ascending) and the truncated power law.
pub fn ks_distance<T: Real>(tail: &[T], alpha: T, x_min: T, x_max: T) -> Result<T> {
    check_tail(tail, x_min, x_max)?;
    if tail.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("tail must be sorted ascending".into()));
    }
    let ln_t: Vec<T> = tail.iter().map(|&v| (v / x_min).ln()).collect();
    Ok(ks_from_logs(&ln_t, (x_max / x_min).ln(), alpha))
}

/// Fits a truncated power law to a spectrum, scanning every distinct positive
/// eigenvalue as `x_min` candidate whose tail holds at least `min_tail` points.
pub fn fit_tpl<T: Real>(e: &Spectrum<T>, min_tail: usize) -> Result<PowerLawFit<T>> {
    if min_tail == 0 {
        return Err(Error::Domain("min_tail must be at least 1".into()));
    }
    let pos = e.positive();
    if pos.len() < min_tail {
        return Err(Error::TooFewTailPoints { needed: min_tail, have: pos.len() });
    }
    let x_max = *pos.last().expect("nonempty");
    let ln_x_max = x_max.ln();
    let logs: Vec<T> = pos.iter().map(|v| v.ln()).collect();

    let candidates: Vec<usize> =
        (0..=pos.len() - min_tail).filter(|&i| (i == 0 || pos[i] != pos[i - 1]) && pos[i] < x_max).collect();

    if candidates.is_empty() {
        // Every admissible tail is a single repeated value: the likelihood is
        // maximized at the upper search bound and no point lies inside the range.
        let alpha = T::c(ALPHA_MAX);
        let first = pos.partition_point(|&v| v < x_max);
        return Ok(PowerLawFit {
            alpha,
            x_min: x_max,
            x_max,
            d_ks: T::one(),
            n_tail: pos.len() - first,
            scan: vec![ScanPoint { x_min: x_max, alpha, d_ks: T::one() }],
            warnings: vec![FitWarning::AlphaAtSearchBound, FitWarning::DegenerateTail, FitWarning::HighAlpha],
        });
    }

    let fitted: Vec<(ScanPoint<T>, Option<FitWarning>)> = candidates
        .par_iter()
        .map(|&i| {
            let x_min = pos[i];
            let ln_xmin = logs[i];
            let ln_r = ln_x_max - ln_xmin;
            let ln_t: Vec<T> = logs[i..].iter().map(|&l| l - ln_xmin).collect();
            let sum_ln_t = compensated_sum(ln_t.iter().copied());
            let (alpha, warn) = mle_from_stats(ln_t.len(), sum_ln_t, ln_r, ln_xmin);
            let d_ks = ks_from_logs(&ln_t, ln_r, alpha);
            (ScanPoint { x_min, alpha, d_ks }, warn)
        })
        .collect();

    let mut best = 0;
    for (k, (p, _)) in fitted.iter().enumerate() {
        if p.d_ks < fitted[best].0.d_ks {
            best = k;
        }
    }
    let (chosen, warn) = fitted[best];
    let mut warnings: Vec<FitWarning> = warn.into_iter().collect();
    if chosen.alpha > T::c(HIGH_ALPHA) {
        warnings.push(FitWarning::HighAlpha);
    }
    Ok(PowerLawFit {
        alpha: chosen.alpha,
        x_min: chosen.x_min,
        x_max,
        d_ks: chosen.d_ks,
        n_tail: pos.len() - candidates[best],
        scan: fitted.into_iter().map(|(p, _)| p).collect(),
        warnings,
    })
}
