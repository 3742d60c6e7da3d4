//! Seeded synthetic data: truncated power-law spectra, matrices with a
//! prescribed ESD, planted Simpson's-paradox corpora and a separable MLP.
//!
//! Randomness comes from SplitMix64 (a 64-bit counter stepped by the golden
//! gamma `0x9e3779b97f4a7c15` and passed through a fixed mixer), so every output
//! is a pure function of its seed on every platform. Uniforms use the top 53
//! bits of each draw; Gaussians use the ziggurat sampler of `rand_distr`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;

use crate::analysis::ModelRecord;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model_store::{Activation, Layer, LayerKind, LayerSpec, ModelBundle, Tensor, WeightMatrix};
use crate::net_eval::{self, Dataset};
use crate::plfit::tpl_quantile;
use crate::scalar::Real;

/// Independent generator for stream `stream` under `seed`.
pub fn rng(seed: u64, stream: u64) -> SplitMix64 {
    // One SplitMix step on the stream index decorrelates neighbouring streams.
    let mut mixer = SplitMix64::seed_from_u64(stream);
    SplitMix64::seed_from_u64(seed ^ mixer.random::<u64>())
}

fn check_tpl_params<T: Real>(alpha: T, x_min: T, x_max: T) -> Result<()> {
    if !(alpha > T::one() && alpha.is_finite()) {
        return Err(Error::Domain(format!("sampling needs alpha > 1, got {alpha}")));
    }
    if !(x_min > T::zero() && x_min < x_max && x_max.is_finite()) {
        return Err(Error::Domain(format!("need 0 < x_min < x_max, got [{x_min}, {x_max}]")));
    }
    Ok(())
}

/// `n` inverse-CDF draws from the truncated power law on `[x_min, x_max]`.
pub fn sample_tpl<T: Real>(alpha: T, x_min: T, x_max: T, n: usize, seed: u64) -> Result<Vec<T>> {
    check_tpl_params(alpha, x_min, x_max)?;
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut r = rng(seed, 0);
    (0..n).map(|_| tpl_quantile(T::c(r.random::<f64>()), alpha, x_min, x_max)).collect()
}

/// Stratified variant: draw `i` uses `u = (i + U)/n`, one uniform per stratum.
/// Same law, much lower variance of fitted exponents.
pub fn sample_tpl_stratified<T: Real>(alpha: T, x_min: T, x_max: T, n: usize, seed: u64) -> Result<Vec<T>> {
    check_tpl_params(alpha, x_min, x_max)?;
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut r = rng(seed, 1);
    (0..n)
        .map(|i| {
            let u = (i as f64 + r.random::<f64>()) / n as f64;
            tpl_quantile(T::c(u), alpha, x_min, x_max)
        })
        .collect()
}

/// `rows × k` matrix with orthonormal columns (Gram-Schmidt of a Gaussian, twice).
pub fn random_orthonormal(rows: usize, k: usize, rng: &mut SplitMix64) -> Result<Matrix<f64>> {
    if k > rows {
        return Err(Error::Domain(format!("cannot fit {k} orthonormal columns in dimension {rows}")));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    Ok(Matrix::from_fn(rows, k, |i, j| cols[j][i]))
}

/// `W = U·diag(√λ)·Vᵀ` with random orthonormal `U` (`n × k`) and `V` (`m × k`),
/// `k = min(n, m)`, so that `esd(W)` reproduces `eigs`.
pub fn matrix_with_esd(eigs: &[f64], n: usize, m: usize, seed: u64) -> Result<Matrix<f64>> {
    let k = n.min(m);
    if eigs.len() != k {
        return Err(Error::Domain(format!("need {} eigenvalues for a {n}x{m} matrix, got {}", k, eigs.len())));
    }
    if eigs.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain("eigenvalues must be finite and non-negative".into()));
    }
    let mut r = rng(seed, 2);
    let u = random_orthonormal(n, k, &mut r)?;
    let v = random_orthonormal(m, k, &mut r)?;
    let s: Vec<f64> = eigs.iter().map(|x| x.sqrt()).collect();
    Ok(Matrix::from_fn(n, m, |i, j| (0..k).map(|t| u.get(i, t) * s[t] * v.get(j, t)).sum()))
}

/// Gaussian matrix with entries `N(0, scale²)`.
pub fn gaussian_matrix(n: usize, m: usize, scale: f64, seed: u64) -> Matrix<f64> {
    let mut r = rng(seed, 3);
    Matrix::from_fn(n, m, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

/// Geometry of a planted Simpson's-paradox corpus.
///
/// Group `g` has metric values spread evenly over `g·group_step.0 ± spread/2`
/// (plus `metric_base`) and targets `target_base + g·group_step.1 +
/// within_slope·(x − center) + noise·N(0,1)`. A negative `within_slope` with a
/// positive `group_step.1` yields the reversal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpsonConfig {
    pub n_groups: usize,
    pub n_per_group: usize,
    pub within_slope: f64,
    /// `(metric, target)` offset between consecutive group centers.
    pub group_step: (f64, f64),
    pub spread: f64,
    pub metric_base: f64,
    pub target_base: f64,
    pub noise: f64,
    pub seed: u64,
    pub metric: String,
}

impl Default for SimpsonConfig {
    /// Metric values in the range of layer-averaged exponents and targets in
    /// `[0.5, 1]`, four subgroups of 18 models.
    fn default() -> Self {
        Self {
            n_groups: 4,
            n_per_group: 18,
            within_slope: -0.12,
            group_step: (0.9, 0.1),
            spread: 0.6,
            metric_base: 2.5,
            target_base: 0.6,
            noise: 0.003,
            seed: 0,
            metric: "alpha_avg".into(),
        }
    }
}

impl SimpsonConfig {
    /// Same layout with group centers trending the same way as within-group slopes.
    pub fn homogeneous(mut self) -> Self {
        self.group_step.1 = -self.group_step.1.abs();
        self.within_slope = -self.within_slope.abs();
        self.target_base += self.n_groups as f64 * self.group_step.1.abs();
        self
    }
}

/// Records with a planted trend reversal between subgroups and the aggregate.
/// Subgroups are labelled `g0 … g{n-1}`; targets are stored as `test_acc`.
pub fn synth_simpson(cfg: &SimpsonConfig) -> Result<Vec<ModelRecord>> {
    if cfg.n_groups == 0 || cfg.n_per_group < 3 {
        return Err(Error::Domain("need at least one group of at least 3 records".into()));
    }
    let mut r = rng(cfg.seed, 4);
    let mut out = Vec::with_capacity(cfg.n_groups * cfg.n_per_group);
    for g in 0..cfg.n_groups {
        let center = cfg.metric_base + g as f64 * cfg.group_step.0;
        let level = cfg.target_base + g as f64 * cfg.group_step.1;
        for i in 0..cfg.n_per_group {
            let offset = cfg.spread * (i as f64 / (cfg.n_per_group - 1) as f64 - 0.5);
            let eps: f64 = r.sample(StandardNormal);
            let x = center + offset;
            let y = level + cfg.within_slope * offset + cfg.noise * eps;
            out.push(ModelRecord {
                model_id: format!("g{g}-m{i:03}"),
                subgroup: format!("g{g}"),
                metrics: BTreeMap::from([(cfg.metric.clone(), x)]),
                train_acc: None,
                test_acc: Some(y),
            });
        }
    }
    Ok(out)
}

/// Options for [`spectral_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModelConfig {
    pub model_id: String,
    pub group: String,
    pub subgroup: String,
    /// Planted exponent per layer; the model depth is its length.
    pub alphas: Vec<f64>,
    /// Widths `d₀, d₁, …, d_L`; layer `l` is `d_l × d_{l+1}`.
    pub widths: Vec<usize>,
    pub x_min: f64,
    pub x_max: f64,
    pub with_init: bool,
    pub test_acc: Option<f64>,
    pub train_acc: Option<f64>,
    pub seed: u64,
}

/// Dense model whose layer ESDs are stratified TPL samples with the planted exponents.
pub fn spectral_model(cfg: &SpectralModelConfig) -> Result<ModelBundle> {
    if cfg.widths.len() != cfg.alphas.len() + 1 {
        return Err(Error::Domain(format!(
            "{} layers need {} widths, got {}",
            cfg.alphas.len(),
            cfg.alphas.len() + 1,
            cfg.widths.len()
        )));
    }
    let mut layers = Vec::with_capacity(cfg.alphas.len());
    for (l, &alpha) in cfg.alphas.iter().enumerate() {
        let (n, m) = (cfg.widths[l], cfg.widths[l + 1]);
        let layer_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(l as u64);
        let eigs = sample_tpl_stratified(alpha, cfg.x_min, cfg.x_max, n.min(m), layer_seed)?;
        let w = matrix_with_esd(&eigs, n, m, layer_seed)?;
        let init = cfg.with_init.then(|| gaussian_matrix(n, m, 1.0 / (n as f64).sqrt(), layer_seed ^ 0xA5A5));
        let activation = if l + 1 == cfg.alphas.len() { Activation::Identity } else { Activation::Relu };
        layers.push(dense_layer(&format!("dense_{l}"), w, init, None, activation)?);
    }
    Ok(ModelBundle {
        model_id: cfg.model_id.clone(),
        group: cfg.group.clone(),
        subgroup: cfg.subgroup.clone(),
        hyperparams: BTreeMap::from([("depth".to_string(), cfg.alphas.len() as f64)]),
        train_acc: cfg.train_acc,
        test_acc: cfg.test_acc,
        layers,
    })
}

/// Builds a dense [`Layer`] with conventional file names.
pub fn dense_layer(
    name: &str,
    w: Matrix<f64>,
    init: Option<Matrix<f64>>,
    bias: Option<Vec<f64>>,
    activation: Activation,
) -> Result<Layer> {
    let shape = vec![w.rows(), w.cols()];
    let spec = LayerSpec {
        name: name.to_string(),
        kind: LayerKind::Dense,
        shape: shape.clone(),
        weight_file: format!("{name}.npy"),
        init_file: init.as_ref().map(|_| format!("{name}_init.npy")),
        bias_file: bias.as_ref().map(|_| format!("{name}_bias.npy")),
        activation: Some(activation),
    };
    Ok(Layer {
        spec,
        weights: Tensor::new(shape.clone(), w.into_vec())?,
        init: init.map(|m| Tensor::new(shape, m.into_vec())).transpose()?,
        bias,
    })
}

/// Options for [`separable_mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub model_id: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub n_samples: usize,
    /// If set, every weight matrix has exactly this rank.
    pub rank: Option<usize>,
    /// Minimum gap between the top two class scores of every kept sample.
    pub margin: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            model_id: "mlp".into(),
            input_dim: 40,
            hidden: 60,
            classes: 10,
            n_samples: 500,
            rank: None,
            margin: 1e-3,
            seed: 0,
        }
    }
}

fn low_rank(n: usize, m: usize, rank: Option<usize>, seed: u64) -> Result<Matrix<f64>> {
    match rank {
        None => Ok(gaussian_matrix(n, m, 1.0 / (n as f64).sqrt(), seed)),
        Some(r) => {
            let a = gaussian_matrix(n, r, 1.0 / (n as f64).sqrt(), seed);
            let b = gaussian_matrix(r, m, 1.0 / (r as f64).sqrt(), seed ^ 0x5EED);
            a.matmul(&b)
        }
    }
}

/// A two-layer ReLU network and a training set labelled by the network
/// itself, so the model classifies every sample correctly with at least
/// `margin` separation.
pub fn separable_mlp(cfg: &MlpConfig) -> Result<(ModelBundle, Dataset)> {
    if cfg.classes < 2 || cfg.n_samples == 0 {
        return Err(Error::Domain("need at least 2 classes and 1 sample".into()));
    }
    let w1 = low_rank(cfg.input_dim, cfg.hidden, cfg.rank, cfg.seed.wrapping_add(11))?;
    let w2 = low_rank(cfg.hidden, cfg.classes, cfg.rank, cfg.seed.wrapping_add(12))?;
    let mut r = rng(cfg.seed, 5);
    let b1: Vec<f64> = (0..cfg.hidden).map(|_| 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
    let model = ModelBundle {
        model_id: cfg.model_id.clone(),
        group: "mlp".into(),
        subgroup: "mlp".into(),
        hyperparams: BTreeMap::from([("depth".to_string(), 2.0)]),
        train_acc: Some(1.0),
        test_acc: None,
        layers: vec![
            dense_layer("hidden", w1, None, Some(b1), Activation::Relu)?,
            dense_layer("output", w2, None, None, Activation::Identity)?,
        ],
    };

    let mut inputs = Vec::with_capacity(cfg.n_samples * cfg.input_dim);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut attempts = 0usize;
    while labels.len() < cfg.n_samples {
        attempts += 1;
        if attempts > 1000 * cfg.n_samples {
            return Err(Error::Numeric("could not draw enough samples with the requested margin".into()));
        }
        let x: Vec<f64> = (0..cfg.input_dim).map(|_| r.sample(StandardNormal)).collect();
        let scores = net_eval::forward(&model, &x)?;
        let best = net_eval::argmax(&scores);
        let runner_up =
            scores.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
        if scores[best] - runner_up >= cfg.margin {
            inputs.extend_from_slice(&x);
            labels.push(best);
        }
    }
    let data = Dataset::new(Matrix::new(cfg.n_samples, cfg.input_dim, inputs)?, labels)?;
    Ok((model, data))
}

/// Wraps a matrix as a standalone weight matrix (`owner_layer` = `name`).
pub fn weight_matrix(name: &str, m: Matrix<f64>) -> Result<WeightMatrix<f64>> {
    WeightMatrix::new(name, 0, m)
}
