//! Differentiable layers with hand-derived backward passes.
//!
//! Sequences are time-major `T x D` matrices. Every layer exposes its
//! trainable tensors through [`Parameterized`] in a fixed order; gradients
//! come back as a layer of the same type holding the gradient values, so the
//! two line up slice for slice.

mod conv;
mod dense;
mod dropout;
mod gradcheck;
mod gru;
mod init;
mod loss;

pub use conv::{conv_output_len, ConvCache, ConvEmbeddingLayer, CelActivation};
pub use dense::{dense_softmax_forward, log_softmax_rows, softmax_rows, DenseCache, DenseLayer};
pub use dropout::{dropout_apply, DropoutMask};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{BiGruCache, GruDirection, GruLayer};
pub use init::{glorot_bound, glorot_uniform};
pub use loss::cross_entropy_loss;

use ndarray::Array2;

/// Time-major feature sequence (`T x D`).
pub type FeatureSeq = Array2<f64>;

pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }
}

/// Flat gradient vector ordered like [`Parameterized::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    values: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_parts(parts: &[&dyn Parameterized]) -> Self {
        let mut values = Vec::new();
        for p in parts {
            for s in p.param_slices() {
                values.extend_from_slice(s);
            }
        }
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forces row-major storage so parameter tensors can be viewed as flat slices.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
