//! Per-matrix spectral quantities and their per-model layer averages.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::ModelRecord;
use crate::error::{Error, Result};
use crate::model_store::{ModelBundle, WeightMatrix};
use crate::plfit::{fit_tpl, FitWarning, PowerLawFit};
use crate::scalar::{compensated_sum, Real};
use crate::spectra::{esd, frobenius_norm_sq, log10_shatten_norm_sum, spectral_norm_sq};

/// Names accepted wherever a model metric is selected.
pub const METRIC_NAMES: [&str; 7] = [
    "alpha_avg",
    "quality_of_alpha_fit",
    "log_spectral_norm",
    "log_frobenius_norm",
    "alpha_hat",
    "log_alpha_shatten_norm",
    "distance_from_init",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooSmall,
    TooFewTailPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetrics<T> {
    pub owner_layer: String,
    pub slice_index: usize,
    pub lambda_max: T,
    /// `log₁₀ λ_max`; absent for an all-zero matrix.
    pub log10_spectral: Option<T>,
    pub log10_frobenius: Option<T>,
    pub alpha: Option<T>,
    pub d_ks: Option<T>,
    pub log10_alpha_shatten: Option<T>,
    pub skipped: Option<SkipReason>,
    pub fit_warnings: Vec<FitWarning>,
    #[serde(skip)]
    pub fit: Option<PowerLawFit<T>>,
}

impl<T: Real> LayerMetrics<T> {
    pub fn id(&self) -> String {
        format!("{}[{}]", self.owner_layer, self.slice_index)
    }
}

/// Norms and (when eligible) the truncated power-law fit of one matrix.
pub fn layer_metrics<T: Real>(w: &WeightMatrix<T>, min_tail: usize) -> Result<LayerMetrics<T>> {
    let e = esd(w)?;
    let lambda_max = spectral_norm_sq(&e)?;
    let frob = frobenius_norm_sq(&e)?;
    let positive = lambda_max > T::zero();
    let mut lm = LayerMetrics {
        owner_layer: w.owner_layer.clone(),
        slice_index: w.slice_index,
        lambda_max,
        log10_spectral: positive.then(|| lambda_max.log10()),
        log10_frobenius: positive.then(|| frob.log10()),
        alpha: None,
        d_ks: None,
        log10_alpha_shatten: None,
        skipped: None,
        fit_warnings: Vec::new(),
        fit: None,
    };
    if w.too_small() {
        lm.skipped = Some(SkipReason::TooSmall);
        return Ok(lm);
    }
    match fit_tpl(&e, min_tail) {
        Ok(fit) => {
            lm.alpha = Some(fit.alpha);
            lm.d_ks = Some(fit.d_ks);
            lm.log10_alpha_shatten = log10_shatten_norm_sum(&e, fit.alpha)?;
            lm.fit_warnings = fit.warnings.clone();
            lm.fit = Some(fit);
        }
        Err(Error::TooFewTailPoints { .. }) => {
            lm.skipped = Some(SkipReason::TooFewTailPoints);
            lm.fit_warnings.push(FitWarning::TooFewTailPoints);
        }
        Err(e) => return Err(e),
    }
    Ok(lm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMetrics {
    pub model_id: String,
    /// ⟨α⟩
    pub alpha_avg: Option<f64>,
    /// ⟨D_KS⟩
    pub quality_of_alpha_fit: Option<f64>,
    /// ⟨log₁₀ ‖W‖₂²⟩
    pub log_spectral_norm: f64,
    /// ⟨log₁₀ ‖W‖_F²⟩
    pub log_frobenius_norm: f64,
    /// ⟨α · log₁₀ λ_max⟩
    pub alpha_hat: Option<f64>,
    /// ⟨log₁₀ Σ λᵅ⟩
    pub log_alpha_shatten_norm: Option<f64>,
    /// ⟨‖W − W_init‖_F⟩, only when every layer ships its initial weights.
    pub distance_from_init: Option<f64>,
    pub n_matrices_used: usize,
    pub n_matrices_skipped: usize,
    pub warnings: Vec<String>,
}

impl ModelMetrics {
    /// Looks up a metric by name; `None` for unknown names, `Some(None)` when undefined.
    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        Some(match name {
            "alpha_avg" => self.alpha_avg,
            "quality_of_alpha_fit" => self.quality_of_alpha_fit,
            "log_spectral_norm" => Some(self.log_spectral_norm),
            "log_frobenius_norm" => Some(self.log_frobenius_norm),
            "alpha_hat" => self.alpha_hat,
            "log_alpha_shatten_norm" => self.log_alpha_shatten_norm,
            "distance_from_init" => self.distance_from_init,
            _ => return None,
        })
    }

    pub fn values(&self) -> BTreeMap<String, f64> {
        METRIC_NAMES.iter().filter_map(|&n| self.get(n).flatten().map(|v| (n.to_string(), v))).collect()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| compensated_sum(v.iter().copied()) / v.len() as f64)
}

/// Averages per-matrix quantities. Norm averages use every matrix with
/// `λ_max > 0`; power-law averages use only successfully fitted matrices.
pub fn aggregate(
    model_id: &str,
    layers: &[LayerMetrics<f64>],
    distance_from_init: Option<f64>,
) -> Result<ModelMetrics> {
    if layers.is_empty() {
        return Err(Error::EmptyModel(model_id.to_string()));
    }
    let mut warnings = Vec::new();
    for l in layers.iter().filter(|l| l.log10_spectral.is_none()) {
        warnings.push(format!("{}: zero matrix excluded from log-norm averages", l.id()));
    }
    let normed: Vec<&LayerMetrics<f64>> = layers.iter().filter(|l| l.log10_spectral.is_some()).collect();
    if normed.is_empty() {
        return Err(Error::EmptyModel(model_id.to_string()));
    }
    let fitted: Vec<&LayerMetrics<f64>> = normed.iter().copied().filter(|l| l.alpha.is_some()).collect();

    let mut flagged = BTreeSet::new();
    for l in &fitted {
        for w in &l.fit_warnings {
            flagged.insert((l.id(), *w));
        }
    }
    warnings.extend(flagged.into_iter().map(|(id, w)| format!("{id}: {}", w.as_str())));

    Ok(ModelMetrics {
        model_id: model_id.to_string(),
        alpha_avg: mean(fitted.iter().map(|l| l.alpha.unwrap())),
        quality_of_alpha_fit: mean(fitted.iter().map(|l| l.d_ks.unwrap())),
        log_spectral_norm: mean(normed.iter().map(|l| l.log10_spectral.unwrap())).expect("nonempty"),
        log_frobenius_norm: mean(normed.iter().map(|l| l.log10_frobenius.unwrap())).expect("nonempty"),
        alpha_hat: mean(fitted.iter().map(|l| l.alpha.unwrap() * l.log10_spectral.unwrap())),
        log_alpha_shatten_norm: mean(fitted.iter().filter_map(|l| l.log10_alpha_shatten)),
        distance_from_init,
        n_matrices_used: fitted.len(),
        n_matrices_skipped: layers.len() - fitted.len(),
        warnings,
    })
}

/// Mean Frobenius distance from initialization over all extracted matrices,
/// or `None` if any layer lacks initial weights.
pub fn distance_from_init(bundle: &ModelBundle) -> Result<Option<f64>> {
    if bundle.layers.is_empty() || bundle.layers.iter().any(|l| l.init.is_none()) {
        return Ok(None);
    }
    let mut dists = Vec::new();
    for layer in &bundle.layers {
        let current = layer.matrices()?;
        let init = layer.init_matrices()?.expect("checked above");
        for (w, w0) in current.iter().zip(&init) {
            dists.push(w.matrix.sub(&w0.matrix)?.frobenius_norm_sq().sqrt());
        }
    }
    Ok(mean(dists))
}

/// Per-matrix metrics of a model, in layer/slice order.
pub fn layer_metrics_for(bundle: &ModelBundle, min_tail: usize) -> Result<Vec<LayerMetrics<f64>>> {
    let matrices = bundle.matrices()?;
    matrices.par_iter().map(|w| layer_metrics(w, min_tail)).collect()
}

/// Per-model averages of every metric, together with the per-matrix details.
pub fn analyze_model(bundle: &ModelBundle, min_tail: usize) -> Result<(ModelMetrics, Vec<LayerMetrics<f64>>)> {
    let layers = layer_metrics_for(bundle, min_tail)?;
    let metrics = aggregate(&bundle.model_id, &layers, distance_from_init(bundle)?)?;
    Ok((metrics, layers))
}

pub fn model_metrics(bundle: &ModelBundle, min_tail: usize) -> Result<ModelMetrics> {
    analyze_model(bundle, min_tail).map(|(m, _)| m)
}

/// Joins a model's metadata and metrics into an analysis record.
pub fn to_record(bundle: &ModelBundle, metrics: &ModelMetrics) -> ModelRecord {
    ModelRecord {
        model_id: bundle.model_id.clone(),
        subgroup: bundle.subgroup.clone(),
        metrics: metrics.values(),
        train_acc: bundle.train_acc,
        test_acc: bundle.test_acc,
    }
}

/// One CSV row per model: id, subgroup, hyperparameters, all metrics, accuracies.
pub fn corpus_csv(rows: &[(&ModelBundle, &ModelMetrics)]) -> String {
    let hyper: BTreeSet<&str> = rows.iter().flat_map(|(b, _)| b.hyperparams.keys().map(String::as_str)).collect();
    let mut header = vec!["model_id".to_string(), "subgroup".to_string()];
    header.extend(hyper.iter().map(|h| h.to_string()));
    header.extend(METRIC_NAMES.iter().map(|m| m.to_string()));
    header.extend(["train_acc".to_string(), "test_acc".to_string()]);
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(&header).expect("in-memory write");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (bundle, metrics) in rows {
        let mut cells = vec![bundle.model_id.clone(), bundle.subgroup.clone()];
        cells.extend(hyper.iter().map(|h| fmt(bundle.hyperparams.get(*h).copied())));
        cells.extend(METRIC_NAMES.iter().map(|m| fmt(metrics.get(m).flatten())));
        cells.extend([fmt(bundle.train_acc), fmt(bundle.test_acc)]);
        out.write_record(&cells).expect("in-memory write");
    }
    String::from_utf8(out.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn fitted(alpha: f64, lambda_max: f64) -> LayerMetrics<f64> {
        LayerMetrics {
            owner_layer: "l".into(),
            slice_index: 0,
            lambda_max,
            log10_spectral: Some(lambda_max.log10()),
            log10_frobenius: Some(lambda_max.log10() + 1.0),
            alpha: Some(alpha),
            d_ks: Some(0.05),
            log10_alpha_shatten: Some(alpha * lambda_max.log10()),
            skipped: None,
            fit_warnings: vec![],
            fit: None,
        }
    }

    #[test]
    fn forced_arithmetic() {
        let m = aggregate("m", &[fitted(2.0, 10.0), fitted(3.0, 100.0)], None).unwrap();
        assert_eq!(m.alpha_avg, Some(2.5));
        assert_eq!(m.log_spectral_norm, 1.5);
        assert_eq!(m.alpha_hat, Some(4.0));
        assert_eq!(m.n_matrices_used, 2);
    }

    #[test]
    fn constant_spectrum_layer() {
        let w = WeightMatrix::new("w", 0, Matrix::<f64>::identity(50).scaled(100.0)).unwrap();
        let lm = layer_metrics(&w, 10).unwrap();
        assert!((lm.lambda_max - 1e4).abs() < 1e-8);
        assert!((lm.log10_spectral.unwrap() - 4.0).abs() < 1e-12);
        assert!((lm.log10_frobenius.unwrap() - (50.0f64 * 1e4).log10()).abs() < 1e-12);
        assert!(lm.fit_warnings.contains(&FitWarning::DegenerateTail));
    }

    #[test]
    fn small_matrix_is_skipped() {
        let w = WeightMatrix::new("w", 0, Matrix::<f64>::identity(4)).unwrap();
        let lm = layer_metrics(&w, 10).unwrap();
        assert_eq!(lm.skipped, Some(SkipReason::TooSmall));
        assert!(lm.alpha.is_none() && lm.d_ks.is_none());
        assert_eq!(lm.log10_spectral, Some(0.0));
    }

    #[test]
    fn rank_deficient_matrix_lacks_tail() {
        let w = WeightMatrix::new("w", 0, Matrix::from_fn(20, 20, |i, j| (i * j) as f64)).unwrap();
        let lm = layer_metrics(&w, 10).unwrap();
        assert_eq!(lm.skipped, Some(SkipReason::TooFewTailPoints));
    }

    #[test]
    fn zero_matrix_warns_and_empty_errors() {
        let mut zero = fitted(2.0, 10.0);
        zero.lambda_max = 0.0;
        zero.log10_spectral = None;
        zero.log10_frobenius = None;
        zero.alpha = None;
        zero.d_ks = None;
        let m = aggregate("m", &[fitted(2.0, 10.0), zero.clone()], None).unwrap();
        assert_eq!(m.n_matrices_skipped, 1);
        assert_eq!(m.log_spectral_norm, 1.0);
        assert!(m.warnings.iter().any(|w| w.contains("zero matrix")));
        assert!(matches!(aggregate("m", &[zero], None), Err(Error::EmptyModel(_))));
        assert!(matches!(aggregate("m", &[], None), Err(Error::EmptyModel(_))));
    }

    #[test]
    fn metric_lookup() {
        let m = aggregate("m", &[fitted(2.0, 10.0)], None).unwrap();
        assert_eq!(m.get("alpha_avg"), Some(Some(2.0)));
        assert_eq!(m.get("distance_from_init"), Some(None));
        assert_eq!(m.get("nope"), None);
        assert_eq!(m.values().len(), 6);
    }

    #[test]
    fn corpus_csv_quotes_awkward_ids() {
        let bundle = ModelBundle {
            model_id: "a,\"b\"".into(),
            group: "g".into(),
            subgroup: "s".into(),
            hyperparams: Default::default(),
            train_acc: None,
            test_acc: Some(0.5),
            layers: Vec::new(),
        };
        let m = aggregate("m", &[fitted(2.0, 10.0)], None).unwrap();
        let text = corpus_csv(&[(&bundle, &m)]);
        let mut rows = csv::Reader::from_reader(text.as_bytes());
        let row = rows.records().next().unwrap().unwrap();
        assert_eq!(&row[0], "a,\"b\"");
        assert_eq!(row.len(), 2 + METRIC_NAMES.len() + 2);
        assert_eq!(&row[row.len() - 1], "0.5");
    }
}
