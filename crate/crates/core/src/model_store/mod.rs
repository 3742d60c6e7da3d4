//! On-disk model container: a directory holding `manifest.json` plus one NPY
//! file per layer weight (and optional init/bias arrays).

mod npy;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub use npy::{
    decode_array, encode_array, read_array_file, read_label_file, write_array_file, write_label_file, Tensor,
};

pub const MANIFEST: &str = "manifest.json";

/// Matrices with a smaller dimension below this are loadable but not PL-fitted.
pub const MIN_FIT_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub weight_file: String,
    #[serde(default)]
    pub init_file: Option<String>,
    #[serde(default)]
    pub bias_file: Option<String>,
    #[serde(default)]
    pub activation: Option<Activation>,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let rank = match self.kind {
            LayerKind::Dense => 2,
            LayerKind::Conv2d => 4,
        };
        if self.shape.len() != rank {
            return Err(Error::Load(format!(
                "layer {:?}: {:?} shape must have {} dims, got {:?}",
                self.name, self.kind, rank, self.shape
            )));
        }
        if self.shape.contains(&0) {
            return Err(Error::Load(format!("layer {:?}: zero dimension in {:?}", self.name, self.shape)));
        }
        Ok(())
    }

    /// `(N, M)` of each extracted matrix.
    pub fn matrix_dims(&self) -> (usize, usize) {
        let s = &self.shape;
        (s[s.len() - 2], s[s.len() - 1])
    }

    /// Number of matrices this layer contributes: 1 for dense, `k·k` for conv.
    pub fn n_matrices(&self) -> usize {
        match self.kind {
            LayerKind::Dense => 1,
            LayerKind::Conv2d => self.shape[0] * self.shape[1],
        }
    }
}

/// One layer with its arrays in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Tensor,
    pub init: Option<Tensor>,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    pub fn matrices(&self) -> Result<Vec<WeightMatrix<f64>>> {
        extract_matrices(&self.spec, &self.weights)
    }

    pub fn init_matrices(&self) -> Result<Option<Vec<WeightMatrix<f64>>>> {
        self.init.as_ref().map(|t| extract_matrices(&self.spec, t)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub group: String,
    pub subgroup: String,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub train_acc: Option<f64>,
    #[serde(default)]
    pub test_acc: Option<f64>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model_id: String,
    pub group: String,
    pub subgroup: String,
    pub hyperparams: BTreeMap<String, f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub layers: Vec<Layer>,
}

impl ModelBundle {
    /// Depth `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            model_id: self.model_id.clone(),
            group: self.group.clone(),
            subgroup: self.subgroup.clone(),
            hyperparams: self.hyperparams.clone(),
            train_acc: self.train_acc,
            test_acc: self.test_acc,
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
        }
    }

    /// All extracted matrices in layer order.
    pub fn matrices(&self) -> Result<Vec<WeightMatrix<f64>>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.matrices()?);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        validate_manifest(&self.manifest())?;
        for layer in &self.layers {
            check_tensor_shape(&layer.spec, "weights", &layer.weights.shape)?;
            if let Some(init) = &layer.init {
                check_tensor_shape(&layer.spec, "init", &init.shape)?;
            }
            if let Some(bias) = &layer.bias {
                let (_, m) = layer.spec.matrix_dims();
                if bias.len() != m {
                    return Err(Error::Load(format!(
                        "layer {:?}: bias length {} != output width {}",
                        layer.spec.name,
                        bias.len(),
                        m
                    )));
                }
            }
        }
        Ok(())
    }
}

fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.model_id.is_empty() {
        return Err(Error::Load("model_id must be nonempty".into()));
    }
    let mut names = HashSet::new();
    for layer in &m.layers {
        layer.validate()?;
        if !names.insert(layer.name.as_str()) {
            return Err(Error::Load(format!("duplicate layer name {:?}", layer.name)));
        }
    }
    for acc in [m.train_acc, m.test_acc].into_iter().flatten() {
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Load(format!("accuracy {acc} outside [0, 1]")));
        }
    }
    for key in ["depth", "L"] {
        if let Some(&d) = m.hyperparams.get(key) {
            if d != m.layers.len() as f64 {
                return Err(Error::Load(format!(
                    "hyperparam {key} = {d} but manifest lists {} layers",
                    m.layers.len()
                )));
            }
        }
    }
    Ok(())
}

fn check_tensor_shape(spec: &LayerSpec, what: &str, shape: &[usize]) -> Result<()> {
    if shape != spec.shape.as_slice() {
        return Err(Error::Load(format!(
            "layer {:?}: {what} file has shape {:?}, manifest says {:?}",
            spec.name, shape, spec.shape
        )));
    }
    Ok(())
}

/// One analyzable 2-D matrix: a dense layer or one `(i, j)` slice of a conv kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    pub owner_layer: String,
    pub slice_index: usize,
    pub matrix: Matrix<T>,
}

impl<T: Real> WeightMatrix<T> {
    pub fn new(owner_layer: impl Into<String>, slice_index: usize, matrix: Matrix<T>) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::Data("weight matrix contains non-finite entries".into()));
        }
        Ok(Self { owner_layer: owner_layer.into(), slice_index, matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// `min(N, M) < 10`: too few eigenvalues for a meaningful tail fit.
    pub fn too_small(&self) -> bool {
        self.matrix.min_dim() < MIN_FIT_DIM
    }

    pub fn id(&self) -> String {
        format!("{}[{}]", self.owner_layer, self.slice_index)
    }

    pub fn with_matrix(&self, matrix: Matrix<T>) -> Self {
        Self { owner_layer: self.owner_layer.clone(), slice_index: self.slice_index, matrix }
    }

    pub fn cast<U: Real>(&self) -> WeightMatrix<U> {
        let data = self.matrix.as_slice().iter().map(|v| U::c(v.to_f64_lossy())).collect();
        WeightMatrix {
            owner_layer: self.owner_layer.clone(),
            slice_index: self.slice_index,
            matrix: Matrix::new(self.rows(), self.cols(), data).expect("same shape"),
        }
    }
}

/// Splits a layer tensor into its 2-D matrices. Conv2D `(kh, kw, N, M)` yields
/// `kh·kw` slices `T[i, j, :, :]`, enumerated row-major in `(i, j)`.
pub fn extract_matrices(spec: &LayerSpec, tensor: &Tensor) -> Result<Vec<WeightMatrix<f64>>> {
    spec.validate()?;
    check_tensor_shape(spec, "tensor", &tensor.shape).map_err(|e| Error::Shape(e.to_string()))?;
    if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("layer {:?}: non-finite value at index {:?}", spec.name, tensor.unravel(i))));
    }
    let (n, m) = spec.matrix_dims();
    tensor
        .data
        .chunks_exact(n * m)
        .enumerate()
        .map(|(slice, chunk)| WeightMatrix::new(spec.name.clone(), slice, Matrix::new(n, m, chunk.to_vec())?))
        .collect()
}

/// Inverse of [`extract_matrices`]: writes slices back into a tensor of the layer's shape.
pub fn assemble_tensor(spec: &LayerSpec, matrices: &[WeightMatrix<f64>]) -> Result<Tensor> {
    let (n, m) = spec.matrix_dims();
    if matrices.len() != spec.n_matrices() {
        return Err(Error::Shape(format!(
            "layer {:?} needs {} matrices, got {}",
            spec.name,
            spec.n_matrices(),
            matrices.len()
        )));
    }
    let mut data = Vec::with_capacity(n * m * matrices.len());
    for (slice, wm) in matrices.iter().enumerate() {
        if wm.slice_index != slice || (wm.rows(), wm.cols()) != (n, m) {
            return Err(Error::Shape(format!(
                "layer {:?}: slice {} is {}x{} at index {}, expected {}x{}",
                spec.name,
                slice,
                wm.rows(),
                wm.cols(),
                wm.slice_index,
                n,
                m
            )));
        }
        data.extend_from_slice(wm.matrix.as_slice());
    }
    Tensor::new(spec.shape.clone(), data)
}

fn load_tensor(root: &Path, rel: &str) -> Result<Tensor> {
    let path = root.join(rel);
    if !path.is_file() {
        return Err(Error::Load(format!("missing array file {}", path.display())));
    }
    read_array_file(&path)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

/// Loads a model directory and checks every array against its manifest entry.
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for spec in manifest.layers {
        let weights = load_tensor(dir, &spec.weight_file)?;
        check_tensor_shape(&spec, "weight", &weights.shape)?;
        let init = spec.init_file.as_deref().map(|f| load_tensor(dir, f)).transpose()?;
        let bias = match spec.bias_file.as_deref() {
            Some(f) => {
                let t = load_tensor(dir, f)?;
                if t.shape.len() != 1 {
                    return Err(Error::Load(format!("bias {f} must be 1-D, got {:?}", t.shape)));
                }
                Some(t.data)
            }
            None => None,
        };
        layers.push(Layer { spec, weights, init, bias });
    }
    let bundle = ModelBundle {
        model_id: manifest.model_id,
        group: manifest.group,
        subgroup: manifest.subgroup,
        hyperparams: manifest.hyperparams,
        train_acc: manifest.train_acc,
        test_acc: manifest.test_acc,
        layers,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `manifest.json` and every array (as `<f8`) into `dir`.
pub fn write_model(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for layer in &bundle.layers {
        write_array_file(dir.join(&layer.spec.weight_file), &layer.weights)?;
        if let (Some(f), Some(t)) = (&layer.spec.init_file, &layer.init) {
            write_array_file(dir.join(f), t)?;
        }
        if let (Some(f), Some(b)) = (&layer.spec.bias_file, &layer.bias) {
            write_array_file(dir.join(f), &Tensor::new(vec![b.len()], b.clone())?)?;
        }
    }
    let json = serde_json::to_string_pretty(&bundle.manifest()).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Resolves a corpus: either a JSON array of model directories (relative
/// entries are taken relative to the file) or a directory scanned recursively
/// for `manifest.json`. Returned paths are sorted.
pub fn resolve_corpus(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let mut dirs = if path.is_dir() {
        let mut found = Vec::new();
        scan_for_manifests(path, &mut found)?;
        found
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<PathBuf> =
            serde_json::from_str(&text).map_err(|e| Error::Load(format!("corpus file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        entries.into_iter().map(|p| if p.is_relative() { base.join(p) } else { p }).collect()
    };
    dirs.sort();
    Ok(dirs)
}

fn scan_for_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(MANIFEST).is_file() {
        out.push(dir.to_path_buf());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            scan_for_manifests(&p, out)?;
        }
    }
    Ok(())
}
