//! Library results checked against independent reference computations.

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use spectral_diag::analysis::kendall_tau;
use spectral_diag::linalg::Matrix;
use spectral_diag::metrics::layer_metrics;
use spectral_diag::net_eval::{accuracy, forward};
use spectral_diag::plfit::{fit_alpha_mle, ks_distance, tpl_cdf};
use spectral_diag::spectra::{esd, log10_shatten_norm_sum, shatten_norm_sum, MatrixId, Spectrum};
use spectral_diag::synth::{self, MlpConfig};
use spectral_diag::{fit_tpl, WeightMatrix, WeightMatrix32};

fn spectrum(v: Vec<f64>) -> Spectrum<f64> {
    Spectrum::from_eigenvalues(v, MatrixId { owner_layer: "t".into(), slice_index: 0 }).unwrap()
}

#[test]
fn esd_matches_symmetric_eigensolver() {
    for (seed, &(n, m)) in [(12, 12), (40, 15), (15, 40), (64, 100), (1, 30), (30, 1)].iter().enumerate() {
        let w = synth::gaussian_matrix(n, m, 0.3, seed as u64);
        let e = esd(&WeightMatrix::new("w", 0, w.clone()).unwrap()).unwrap();
        let dm = DMatrix::from_row_slice(n, m, w.as_slice());
        let mut want: Vec<f64> = SymmetricEigen::new(dm.transpose() * &dm).eigenvalues.iter().copied().collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // the ESD has min(n, m) entries; the rest of WᵀW's spectrum is zero
        let want = &want[want.len() - e.len()..];
        let top = want[want.len() - 1];
        for (a, b) in e.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() <= 1e-10 * top, "{n}x{m}: {a} vs {b}");
        }
    }
}

#[test]
fn single_precision_esd_tracks_double() {
    let w = synth::gaussian_matrix(50, 70, 1.0, 3);
    let e64 = esd(&WeightMatrix::new("w", 0, w.clone()).unwrap()).unwrap();
    let w32: WeightMatrix32 = WeightMatrix::new("w", 0, w).unwrap().cast();
    let e32 = esd(&w32).unwrap();
    let top = *e64.eigenvalues.last().unwrap();
    for (a, b) in e64.eigenvalues.iter().zip(&e32.eigenvalues) {
        assert!((a - *b as f64).abs() <= 1e-4 * top, "{a} vs {b}");
    }
}

/// Σ λᵅ for integer α, summed exactly over the rational values of the eigenvalues.
fn exact_power_sum(eigs: &[f64], a: u32) -> f64 {
    let mut acc = BigRational::zero();
    for &l in eigs {
        let q = BigRational::from_float(l).unwrap();
        acc += num_traits::pow(q, a as usize);
    }
    acc.to_f64().unwrap()
}

#[test]
fn shatten_sum_matches_exact_power_sum() {
    let eigs: Vec<f64> = (0..300).map(|i| 1e-3 + (i as f64 * 0.37).sin().abs() * 40.0).collect();
    let e = spectrum(eigs.clone());
    for a in [1u32, 2, 3, 5] {
        let got = shatten_norm_sum(&e, a as f64).unwrap();
        let want = exact_power_sum(&eigs, a);
        assert!(((got - want) / want).abs() <= 1e-12, "a={a}: {got} vs {want}");
        let log = log10_shatten_norm_sum(&e, a as f64).unwrap().unwrap();
        assert!((log - want.log10()).abs() <= 1e-12);
    }
}

#[test]
fn mle_matches_closed_form_power_law_limit() {
    // As x_max → ∞ the TPL MLE tends to the Pareto estimate 1 + n / Σ ln(x / x_min).
    let tail: Vec<f64> = synth::sample_tpl(2.5, 1.0, 1e12, 4000, 9).unwrap();
    let n = tail.len() as f64;
    let hill = 1.0 + n / tail.iter().map(|x| x.ln()).sum::<f64>();
    let (alpha, warn) = fit_alpha_mle(&tail, 1.0, 1e12).unwrap();
    assert!(warn.is_none());
    assert!((alpha - hill).abs() < 2e-4, "{alpha} vs {hill}");
}

#[test]
fn mle_recovers_planted_exponent_on_stratified_sample() {
    for &a in &[1.2f64, 2.0, 3.0, 6.0] {
        let tail = synth::sample_tpl_stratified(a, 2.0, 80.0, 2000, 1).unwrap();
        let (alpha, _) = fit_alpha_mle(&tail, 2.0, 80.0).unwrap();
        assert!((alpha - a).abs() < 0.03, "planted {a}, fitted {alpha}");
    }
}

/// Supremum of |F_n − F| evaluated on both sides of every jump.
fn brute_ks(tail: &[f64], a: f64, lo: f64, hi: f64) -> f64 {
    let mut v = tail.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for &x in &v {
        let f = tpl_cdf(x, a, lo, hi).unwrap();
        let below = v.iter().filter(|&&y| y < x).count() as f64 / n;
        let at = v.iter().filter(|&&y| y <= x).count() as f64 / n;
        d = d.max((f - below).abs()).max((at - f).abs());
    }
    d
}

#[test]
fn ks_distance_matches_brute_force() {
    let mut r = synth::rng(17, 0);
    for case in 0..30 {
        let n = r.random_range(1..120);
        let mut tail: Vec<f64> = (0..n).map(|_| 1.0 + 99.0 * r.random::<f64>()).collect();
        if case % 3 == 0 {
            tail.extend_from_slice(&[10.0, 10.0, 10.0]);
        }
        tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let a = 1.1 + 3.0 * r.random::<f64>();
        let got = ks_distance(&tail, a, 1.0, 100.0).unwrap();
        let want = brute_ks(&tail, a, 1.0, 100.0);
        assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn fit_picks_global_ks_minimum() {
    let mut v = synth::sample_tpl(2.0, 3.0, 60.0, 400, 2).unwrap();
    v.extend((0..100).map(|i| 0.1 + i as f64 * 0.02));
    let fit = fit_tpl(&spectrum(v), 10).unwrap();
    let best = fit.scan.iter().map(|p| p.d_ks).fold(f64::INFINITY, f64::min);
    assert_eq!(fit.d_ks, best);
    let first = fit.scan.iter().find(|p| p.d_ks == best).unwrap();
    assert_eq!(first.x_min, fit.x_min);
}

fn pair_count_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            s += dx * dy;
            tx += (dx == 0) as i64;
            ty += (dy == 0) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if tx == n0 || ty == n0 {
        return 0.0;
    }
    s as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

#[test]
fn kendall_tau_matches_pair_counting_on_large_inputs() {
    let mut r = synth::rng(21, 0);
    for _ in 0..20 {
        let n = r.random_range(50..400);
        let x: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 20.0).round()).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.5 + r.random::<f64>() * 8.0).round()).collect();
        let got = kendall_tau(&x, &y).unwrap().tau;
        assert!((got - pair_count_tau(&x, &y)).abs() < 1e-13);
    }
}

#[test]
fn kendall_tau_exact_for_small_rational_case() {
    // concordant 4, discordant 0, one x tie and one y tie among 6 pairs
    let got = kendall_tau(&[1, 2, 2, 3], &[1, 1, 2, 3]).unwrap().tau;
    let want = BigRational::new(BigInt::from(4), BigInt::from(5));
    assert!((got - want.to_f64().unwrap()).abs() < 1e-15);
}

/// Dense forward pass written directly from the layer definitions.
fn reference_forward(w1: &Matrix<f64>, b1: &[f64], w2: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = (0..w1.cols())
        .map(|j| (0..w1.rows()).map(|i| x[i] * w1.get(i, j)).sum::<f64>() + b1[j])
        .map(|v| v.max(0.0))
        .collect();
    (0..w2.cols()).map(|k| (0..w2.rows()).map(|j| hidden[j] * w2.get(j, k)).sum()).collect()
}

#[test]
fn forward_pass_matches_reference() {
    let (model, data) = synth::separable_mlp(&MlpConfig { n_samples: 50, seed: 3, ..MlpConfig::default() }).unwrap();
    let w1 = model.layers[0].matrices().unwrap().remove(0).matrix;
    let w2 = model.layers[1].matrices().unwrap().remove(0).matrix;
    let b1 = model.layers[0].bias.clone().unwrap();
    let mut correct = 0;
    for s in 0..data.len() {
        let x = data.inputs.row(s);
        let got = forward(&model, x).unwrap();
        let want = reference_forward(&w1, &b1, &w2, x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let arg = want.iter().enumerate().fold(0, |best, (i, v)| if *v > want[best] { i } else { best });
        correct += (arg == data.labels[s]) as usize;
    }
    assert_eq!(accuracy(&model, &data).unwrap(), correct as f64 / data.len() as f64);
}

#[test]
fn layer_metrics_of_planted_spectrum() {
    let eigs = synth::sample_tpl_stratified(3.0, 1.0, 100.0, 150, 5).unwrap();
    let w = synth::matrix_with_esd(&eigs, 150, 180, 5).unwrap();
    let lm = layer_metrics(&WeightMatrix::new("w", 0, w).unwrap(), 10).unwrap();
    let lmax = eigs.iter().copied().fold(0.0, f64::max);
    assert!((lm.lambda_max - lmax).abs() <= 1e-9 * lmax);
    assert!((lm.log10_frobenius.unwrap() - eigs.iter().sum::<f64>().log10()).abs() < 1e-10);
    assert!((lm.alpha.unwrap() - 3.0).abs() < 0.25);
}
