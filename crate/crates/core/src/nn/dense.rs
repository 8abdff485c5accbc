use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{glorot_uniform, standard, FeatureSeq, Parameterized};
use crate::error::{Error, Result};

/// Output projection `W'` (`D x M`) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::InvalidConfig("dense sizes must be positive".into()));
        }
        Ok(Self {
            weights: glorot_uniform(input, output, input, output, rng),
            bias: Array1::zeros(output),
        })
    }

    pub fn input_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.weights.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    /// Affine map only; returns logits.
    pub fn forward(&self, input: &FeatureSeq) -> Result<(FeatureSeq, DenseCache)> {
        if input.ncols() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects width {}, got {}",
                self.input_size(),
                input.ncols()
            )));
        }
        let mut logits = input.dot(&self.weights);
        logits += &self.bias;
        Ok((logits, DenseCache { input: input.clone() }))
    }

    pub fn backward(&self, cache: &DenseCache, grad_logits: &FeatureSeq) -> Result<(FeatureSeq, Self)> {
        if grad_logits.dim() != (cache.input.nrows(), self.output_size()) {
            return Err(Error::ShapeMismatch("dense gradient shape".into()));
        }
        let grads = Self {
            weights: standard(cache.input.t().dot(grad_logits)),
            bias: grad_logits.sum_axis(Axis(0)),
        };
        Ok((grad_logits.dot(&self.weights.t()), grads))
    }
}

impl Parameterized for DenseLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(logits).mapv(f64::exp)
}

/// Dense projection followed by a row-wise softmax; returns probabilities.
pub fn dense_softmax_forward(input: &FeatureSeq, layer: &DenseLayer) -> Result<(Array2<f64>, DenseCache)> {
    let (logits, cache) = layer.forward(input)?;
    Ok((softmax_rows(&logits), cache))
}
