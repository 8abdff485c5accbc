use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PaddingMode;
use crate::error::{Error, Result};
use crate::frontend::NUM_BINS;
use crate::nn::{
    cross_entropy_loss, dense_softmax_forward, CelActivation, ConvEmbeddingLayer, DenseLayer, FeatureSeq, ParamGrad,
    Parameterized,
};

/// Character-set embedding classifier: one convolution whose kernel spans
/// the whole study window (so it yields a single hidden vector), followed by
/// a softmax over the output symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CseConfig {
    /// Study window length in frames.
    pub window: usize,
    /// Hidden width (number of filters).
    pub hidden: usize,
    pub outputs: usize,
    pub bins: usize,
}

impl Default for CseConfig {
    fn default() -> Self {
        Self {
            window: 5,
            hidden: 64,
            outputs: 30,
            bins: NUM_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CseModel {
    pub hidden: ConvEmbeddingLayer,
    pub output: DenseLayer,
}

impl CseModel {
    pub fn build(cfg: &CseConfig, seed: u64) -> Result<Self> {
        if cfg.outputs == 0 {
            return Err(Error::InvalidConfig("outputs must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            hidden: ConvEmbeddingLayer::new(
                cfg.hidden,
                cfg.window,
                cfg.bins,
                1,
                PaddingMode::Valid,
                CelActivation::Linear,
                &mut rng,
            )?,
            output: DenseLayer::new(cfg.hidden, cfg.outputs, &mut rng)?,
        })
    }

    pub fn window(&self) -> usize {
        self.hidden.kernel
    }

    /// `N x (S * B)` embedding matrix.
    pub fn embedding_matrix(&self) -> &Array2<f64> {
        self.hidden.embedding_matrix()
    }

    fn check_window(&self, window: &FeatureSeq) -> Result<()> {
        let s = self.window();
        if window.nrows() < s {
            return Err(Error::TooShort {
                needed: s,
                got: window.nrows(),
            });
        }
        if window.nrows() > s {
            return Err(Error::ShapeMismatch(format!(
                "study window is {s} frames, got {}",
                window.nrows()
            )));
        }
        Ok(())
    }

    /// Class probabilities for one `S x B` study window.
    pub fn forward(&self, window: &FeatureSeq) -> Result<Array1<f64>> {
        self.check_window(window)?;
        let (h, _) = self.hidden.forward(window)?;
        let (p, _) = dense_softmax_forward(&h, &self.output)?;
        Ok(p.row(0).to_owned())
    }

    /// Cross-entropy loss against class `target` and the parameter gradient.
    pub fn loss_and_grad(&self, window: &FeatureSeq, target: usize) -> Result<(f64, ParamGrad)> {
        self.check_window(window)?;
        let outputs = self.output.output_size();
        if target >= outputs {
            return Err(Error::InvalidConfig(format!("target {target} outside {outputs} classes")));
        }
        let (h, conv_cache) = self.hidden.forward(window)?;
        let (p, dense_cache) = dense_softmax_forward(&h, &self.output)?;
        let mut y = Array1::zeros(outputs);
        y[target] = 1.0;
        let (loss, dlogit) = cross_entropy_loss(p.row(0), y.view())?;
        let dlogit = dlogit.insert_axis(ndarray::Axis(0));
        let (dh, dense_grads) = self.output.backward(&dense_cache, &dlogit)?;
        let conv_grads = self.hidden.param_grads(&conv_cache, &dh)?;
        Ok((loss, ParamGrad::from_parts(&[&conv_grads, &dense_grads])))
    }
}

impl Parameterized for CseModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.hidden.param_slices();
        v.extend(self.output.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.hidden.param_slices_mut();
        v.extend(self.output.param_slices_mut());
        v
    }
}
