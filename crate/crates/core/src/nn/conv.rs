use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, standard, FeatureSeq, Parameterized};
use crate::error::{Error, Result};
use crate::model::PaddingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CelActivation {
    /// Identity, so the filter bank acts as a plain embedding matrix.
    #[default]
    Linear,
    Relu,
}

/// Output length of a strided 1-D convolution over `t` frames.
///
/// `valid`: `floor((t - k) / stride) + 1` (None when `t < k`).
/// `same`: `ceil(t / stride)`.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize, padding: PaddingMode) -> Option<usize> {
    match padding {
        PaddingMode::Valid => (t >= kernel).then(|| (t - kernel) / stride + 1),
        PaddingMode::Same => (t >= 1).then(|| t.div_ceil(stride)),
    }
}

/// The Convolutional Embedding Layer: a 1-D convolution over time whose
/// filters span the whole frequency axis.
///
/// `weights` is `filters x (kernel * bins)`; row `n` is filter `n` flattened
/// frame-major, which makes `weights` the embedding matrix of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEmbeddingLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub kernel: usize,
    pub bins: usize,
    pub stride: usize,
    pub padding: PaddingMode,
    pub activation: CelActivation,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    pre_activation: Array2<f64>,
    input_len: usize,
    pad_left: usize,
}

impl ConvEmbeddingLayer {
    pub fn new<R: Rng + ?Sized>(
        filters: usize,
        kernel: usize,
        bins: usize,
        stride: usize,
        padding: PaddingMode,
        activation: CelActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if filters == 0 || kernel == 0 || bins == 0 || stride == 0 {
            return Err(Error::InvalidConfig(
                "filters, kernel, bins and stride must all be positive".into(),
            ));
        }
        let fan_in = kernel * bins;
        Ok(Self {
            weights: glorot_uniform(filters, fan_in, fan_in, filters, rng),
            bias: Array1::zeros(filters),
            kernel,
            bins,
            stride,
            padding,
            activation,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.nrows()
    }

    /// The `N x (K * B)` embedding matrix (the filter bank itself).
    pub fn embedding_matrix(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        conv_output_len(t, self.kernel, self.stride, self.padding)
    }

    fn pad_left(&self, t: usize, out_len: usize) -> usize {
        match self.padding {
            PaddingMode::Valid => 0,
            PaddingMode::Same => {
                let total = ((out_len - 1) * self.stride + self.kernel).saturating_sub(t);
                total / 2
            }
        }
    }

    pub fn forward(&self, input: &FeatureSeq) -> Result<(FeatureSeq, ConvCache)> {
        if input.ncols() != self.bins {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} bins, got {}",
                self.bins,
                input.ncols()
            )));
        }
        let t = input.nrows();
        let out_len = self.output_len(t).ok_or(Error::TooShort {
            needed: self.kernel,
            got: t,
        })?;
        let pad_left = self.pad_left(t, out_len);
        let width = self.kernel * self.bins;
        let mut cols = Array2::zeros((out_len, width));
        for (o, mut row) in cols.axis_iter_mut(Axis(0)).enumerate() {
            let start = (o * self.stride) as isize - pad_left as isize;
            for k in 0..self.kernel {
                let src = start + k as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                row.slice_mut(s![k * self.bins..(k + 1) * self.bins])
                    .assign(&input.row(src as usize));
            }
        }
        let mut pre = cols.dot(&self.weights.t());
        pre += &self.bias;
        let out = match self.activation {
            CelActivation::Linear => pre.clone(),
            CelActivation::Relu => pre.mapv(|v| v.max(0.0)),
        };
        Ok((
            out,
            ConvCache {
                cols,
                pre_activation: pre,
                input_len: t,
                pad_left,
            },
        ))
    }

    /// Returns `(grad_input, grads)` where `grads` has this layer's shape.
    pub fn backward(&self, cache: &ConvCache, grad_out: &FeatureSeq) -> Result<(FeatureSeq, Self)> {
        let (dpre, grads) = self.grads_inner(cache, grad_out)?;
        let dcols = dpre.dot(&self.weights);
        let mut dinput = Array2::zeros((cache.input_len, self.bins));
        for (o, row) in dcols.axis_iter(Axis(0)).enumerate() {
            let start = (o * self.stride) as isize - cache.pad_left as isize;
            for k in 0..self.kernel {
                let src = start + k as isize;
                if src < 0 || src as usize >= cache.input_len {
                    continue;
                }
                let mut dst = dinput.row_mut(src as usize);
                dst += &row.slice(s![k * self.bins..(k + 1) * self.bins]);
            }
        }
        Ok((dinput, grads))
    }

    /// Parameter gradients only; skips the input gradient when the layer
    /// sits directly on the features.
    pub fn param_grads(&self, cache: &ConvCache, grad_out: &FeatureSeq) -> Result<Self> {
        Ok(self.grads_inner(cache, grad_out)?.1)
    }

    fn grads_inner(&self, cache: &ConvCache, grad_out: &FeatureSeq) -> Result<(FeatureSeq, Self)> {
        if grad_out.dim() != cache.pre_activation.dim() {
            return Err(Error::ShapeMismatch(format!(
                "conv grad {:?} vs cached output {:?}",
                grad_out.dim(),
                cache.pre_activation.dim()
            )));
        }
        let dpre = match self.activation {
            CelActivation::Linear => grad_out.clone(),
            CelActivation::Relu => {
                let mut g = grad_out.clone();
                g.zip_mut_with(&cache.pre_activation, |g, p| {
                    if *p <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
        };
        let grads = Self {
            weights: standard(dpre.t().dot(&cache.cols)),
            bias: dpre.sum_axis(Axis(0)),
            ..self.shape_only()
        };
        Ok((dpre, grads))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            ..self.shape_only()
        }
    }

    fn shape_only(&self) -> Self {
        Self {
            weights: Array2::zeros((0, 0)),
            bias: Array1::zeros(0),
            kernel: self.kernel,
            bins: self.bins,
            stride: self.stride,
            padding: self.padding,
            activation: self.activation,
        }
    }
}

impl Parameterized for ConvEmbeddingLayer {
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
