//! Scale and shape diagnostics for neural-network weight matrices.
//!
//! The numerical core (SVD, spectra, power-law fitting, transforms and
//! correlation statistics) is generic over [`Real`] so it runs in `f32` or
//! `f64`; the aliases below fix the `f64` instantiation that the model store
//! and the command-line tool use.
//!
//! ```
//! use spectral_diag::{esd, fit_tpl, synth, WeightMatrix};
//!
//! let eigs = synth::sample_tpl_stratified(2.5, 1.0, 100.0, 200, 7).unwrap();
//! let w = synth::matrix_with_esd(&eigs, 200, 240, 7).unwrap();
//! let fit = fit_tpl(&esd(&WeightMatrix::new("fc", 0, w).unwrap()).unwrap(), 10).unwrap();
//! assert!((fit.alpha - 2.5).abs() < 0.2);
//! ```

pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model_store;
pub mod net_eval;
pub mod plfit;
pub mod scalar;
pub mod spectra;
pub mod synth;
pub mod transforms;

pub use analysis::{
    classify_correlation, detect_simpson, kendall_tau, linear_fit, subgroup_report, CorrelationLabel,
    CorrelationReport, ModelRecord, SimpsonVerdict, Target,
};
pub use error::{Error, Result};
pub use metrics::{layer_metrics, model_metrics, ModelMetrics};
pub use model_store::{extract_matrices, load_model, read_array_file, write_array_file, write_model, ModelBundle};
pub use plfit::{fit_alpha_mle, fit_tpl, ks_distance, tpl_cdf, FitWarning};
pub use scalar::Real;
pub use spectra::{esd, frobenius_norm_sq, shatten_norm_sum, spectral_norm_sq};
pub use transforms::{clip_extremes, svd_smooth, transform_model, Transform};

/// Dense `f64` matrix.
pub type Mat = linalg::Matrix<f64>;
/// Dense `f32` matrix.
pub type Mat32 = linalg::Matrix<f32>;
/// Weight matrix extracted from a layer, in `f64`.
pub type WeightMatrix = model_store::WeightMatrix<f64>;
pub type WeightMatrix32 = model_store::WeightMatrix<f32>;
/// Empirical spectral density of `WᵀW`.
pub type Esd = spectra::Spectrum<f64>;
pub type Esd32 = spectra::Spectrum<f32>;
/// Truncated power-law fit with its KS scan.
pub type TplFit = plfit::PowerLawFit<f64>;
pub type TplFit32 = plfit::PowerLawFit<f32>;
pub type LayerMetrics = metrics::LayerMetrics<f64>;
pub type Ols = analysis::LinearFit<f64>;
