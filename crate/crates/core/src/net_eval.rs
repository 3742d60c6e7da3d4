//! Forward evaluation of dense models, used to measure training accuracy
//! before and after weight transforms.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model_store::{read_array_file, read_label_file, Activation, LayerKind, ModelBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Matrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::Shape(format!("{} input rows but {} labels", inputs.rows(), labels.len())));
        }
        Ok(Self { inputs, labels })
    }

    /// Reads a 2-D float input array and a 1-D integer label array.
    pub fn load(inputs: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let x = read_array_file(inputs)?;
        if x.shape.len() != 2 {
            return Err(Error::Shape(format!("inputs must be 2-D, got shape {:?}", x.shape)));
        }
        let labels = read_label_file(labels)?
            .into_iter()
            .map(|l| usize::try_from(l).map_err(|_| Error::Data(format!("negative label {l}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(Matrix::new(x.shape[0], x.shape[1], x.data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Checks that the model is a chain of dense layers with matching widths.
pub fn check_topology(bundle: &ModelBundle) -> Result<()> {
    let last = bundle.layers.len().saturating_sub(1);
    let mut width: Option<usize> = None;
    for (l, layer) in bundle.layers.iter().enumerate() {
        if layer.spec.kind != LayerKind::Dense {
            return Err(Error::UnsupportedTopology(format!("layer {:?} is not dense", layer.spec.name)));
        }
        if layer.spec.activation == Some(Activation::Softmax) && l != last {
            return Err(Error::UnsupportedTopology(format!("softmax on non-final layer {:?}", layer.spec.name)));
        }
        let (n, m) = layer.spec.matrix_dims();
        if let Some(w) = width {
            if w != n {
                return Err(Error::Shape(format!(
                    "layer {:?} expects {} inputs, previous layer produces {}",
                    layer.spec.name, n, w
                )));
            }
        }
        width = Some(m);
    }
    if bundle.layers.is_empty() {
        return Err(Error::UnsupportedTopology("model has no layers".into()));
    }
    Ok(())
}

fn forward_unchecked(bundle: &ModelBundle, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for layer in &bundle.layers {
        let (n, m) = layer.spec.matrix_dims();
        let w = &layer.weights.data;
        let mut out = layer.bias.clone().unwrap_or_else(|| vec![0.0; m]);
        for i in 0..n {
            let xi = y[i];
            if xi == 0.0 {
                continue;
            }
            for (o, &wij) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *o += xi * wij;
            }
        }
        match layer.spec.activation.unwrap_or(Activation::Identity) {
            Activation::Identity => {}
            Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => {
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.iter_mut().for_each(|v| *v = (*v - max).exp());
                let z: f64 = out.iter().sum();
                out.iter_mut().for_each(|v| *v /= z);
            }
        }
        y = out;
    }
    y
}

/// Class scores for one input vector: `y ← act(Wᵀy + b)` layer by layer.
pub fn forward(bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
    check_topology(bundle)?;
    let (n, _) = bundle.layers[0].spec.matrix_dims();
    if x.len() != n {
        return Err(Error::Shape(format!("input has {} features, model expects {}", x.len(), n)));
    }
    Ok(forward_unchecked(bundle, x))
}

/// Fraction of rows whose arg-max score equals the label.
pub fn accuracy(bundle: &ModelBundle, data: &Dataset) -> Result<f64> {
    check_topology(bundle)?;
    let (n, _) = bundle.layers[0].spec.matrix_dims();
    let (_, classes) = bundle.layers[bundle.layers.len() - 1].spec.matrix_dims();
    if data.inputs.cols() != n {
        return Err(Error::Shape(format!("inputs have {} features, model expects {}", data.inputs.cols(), n)));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    let correct: usize = (0..data.len())
        .into_par_iter()
        .map(|i| usize::from(argmax(&forward_unchecked(bundle, data.inputs.row(i))) == data.labels[i]))
        .sum();
    Ok(correct as f64 / data.len() as f64)
}
