//! The CRNN acoustic model (CEL -> bidirectional GRU stack -> softmax), the
//! standalone character-set embedding classifier, parameter accounting, and
//! checkpoints.

mod checkpoint;
mod cse;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use cse::{CseConfig, CseModel};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::NUM_BINS;
use crate::nn::{
    dropout_apply, log_softmax_rows, BiGruCache, CelActivation, ConvCache, ConvEmbeddingLayer, DenseCache,
    DenseLayer, DropoutMask, FeatureSeq, GruLayer, ParamGrad, Parameterized,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    #[default]
    Valid,
    Same,
}

impl std::fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PaddingMode::Valid => "valid",
            PaddingMode::Same => "same",
        })
    }
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(PaddingMode::Valid),
            "same" => Ok(PaddingMode::Same),
            other => Err(Error::InvalidConfig(format!("unknown padding mode {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. Defaults reproduce the full-size model:
/// 200 filters of 11 frames at stride 2, four bidirectional GRUs of 256
/// units per direction, dropout 0.25, 30 output symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrnnConfig {
    /// When false the spectrogram feeds the first GRU directly at full frame
    /// rate (the no-CEL baseline).
    pub use_cel: bool,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: PaddingMode,
    pub cel_activation: CelActivation,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub dropout: f64,
    pub alphabet_size: usize,
    pub input_bins: usize,
    /// Initial output bias of the blank, which is the last symbol.
    pub blank_bias: f64,
}

impl Default for CrnnConfig {
    fn default() -> Self {
        Self {
            use_cel: true,
            filters: 200,
            kernel: 11,
            stride: 2,
            padding: PaddingMode::Valid,
            cel_activation: CelActivation::Linear,
            gru_layers: 4,
            gru_hidden: 256,
            dropout: 0.25,
            alphabet_size: 30,
            input_bins: NUM_BINS,
            blank_bias: 0.0,
        }
    }
}

impl CrnnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("gru_hidden", self.gru_hidden),
            ("alphabet_size", self.alphabet_size),
            ("input_bins", self.input_bins),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !self.blank_bias.is_finite() {
            return Err(Error::InvalidConfig("blank_bias must be finite".into()));
        }
        if !self.use_cel && self.gru_layers == 0 {
            return Err(Error::InvalidConfig("a model needs a CEL or at least one GRU layer".into()));
        }
        Ok(())
    }

    /// Output width of every layer in order: CEL (if any), each GRU, softmax.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = Vec::new();
        if self.use_cel {
            w.push(self.filters);
        }
        w.extend(std::iter::repeat_n(2 * self.gru_hidden, self.gru_layers));
        w.push(self.alphabet_size);
        w
    }

    /// Frames the acoustic model emits for `t` input frames.
    pub fn output_frames(&self, t: usize) -> Option<usize> {
        if self.use_cel {
            crate::nn::conv_output_len(t, self.kernel, self.stride, self.padding)
        } else {
            (t > 0).then_some(t)
        }
    }

    /// Compact identifier used in experiment tables.
    pub fn fingerprint(&self) -> String {
        let cel = if self.use_cel {
            format!(
                "cel{}x{}s{}{}{}",
                self.filters,
                self.kernel,
                self.stride,
                match self.padding {
                    PaddingMode::Valid => "v",
                    PaddingMode::Same => "s",
                },
                match self.cel_activation {
                    CelActivation::Linear => "",
                    CelActivation::Relu => "r",
                }
            )
        } else {
            "nocel".to_string()
        };
        let mut fp = format!("{cel}-gru{}x{}-do{}", self.gru_layers, self.gru_hidden, self.dropout);
        if self.blank_bias != 0.0 {
            fp.push_str(&format!("-bb{}", self.blank_bias));
        }
        if self.alphabet_size != 30 || self.input_bins != NUM_BINS {
            fp.push_str(&format!("-m{}b{}", self.alphabet_size, self.input_bins));
        }
        fp
    }
}

/// Itemized trainable-parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub items: Vec<(String, usize)>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.items.iter().map(|(_, n)| n).sum()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.items.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

impl std::fmt::Display for ParamCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, n) in &self.items {
            writeln!(f, "{name:<10} {n:>12}")?;
        }
        write!(f, "{:<10} {:>12}", "total", self.total())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnnModel {
    config: CrnnConfig,
    pub cel: Option<ConvEmbeddingLayer>,
    pub grus: Vec<GruLayer>,
    pub dense: DenseLayer,
}

/// Intermediate state recorded by [`CrnnModel::forward`].
#[derive(Debug, Clone)]
pub struct CrnnCache {
    cel: Option<ConvCache>,
    grus: Vec<(BiGruCache, DropoutMask)>,
    dense: DenseCache,
    log_probs: Array2<f64>,
}

impl CrnnModel {
    pub fn build(config: &CrnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cel = if config.use_cel {
            Some(ConvEmbeddingLayer::new(
                config.filters,
                config.kernel,
                config.input_bins,
                config.stride,
                config.padding,
                config.cel_activation,
                &mut rng,
            )?)
        } else {
            None
        };
        let mut width = if config.use_cel { config.filters } else { config.input_bins };
        let mut grus = Vec::with_capacity(config.gru_layers);
        for _ in 0..config.gru_layers {
            grus.push(GruLayer::new(width, config.gru_hidden, &mut rng)?);
            width = 2 * config.gru_hidden;
        }
        let mut dense = DenseLayer::new(width, config.alphabet_size, &mut rng)?;
        dense.bias[config.alphabet_size - 1] = config.blank_bias;
        Ok(Self {
            config: config.clone(),
            cel,
            grus,
            dense,
        })
    }

    pub fn config(&self) -> &CrnnConfig {
        &self.config
    }

    /// The CEL filter bank (`N x K*B`), if the model has one.
    pub fn embedding_matrix(&self) -> Option<&Array2<f64>> {
        self.cel.as_ref().map(|c| c.embedding_matrix())
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = Vec::new();
        if let Some(c) = &self.cel {
            w.push(c.filters());
        }
        w.extend(self.grus.iter().map(|g| g.output_size()));
        w.push(self.dense.output_size());
        w
    }

    pub fn count_params(&self) -> ParamCount {
        let mut items = Vec::new();
        if let Some(c) = &self.cel {
            items.push(("cel".to_string(), c.num_params()));
        }
        for (i, g) in self.grus.iter().enumerate() {
            items.push((format!("bigru{}", i + 1), g.num_params()));
        }
        items.push(("softmax".to_string(), self.dense.num_params()));
        ParamCount { items }
    }

    /// Per-layer `(name, start, end)` ranges into the flat parameter vector.
    pub fn segments(&self) -> Vec<(String, usize, usize)> {
        let mut off = 0;
        self.count_params()
            .items
            .into_iter()
            .map(|(name, n)| {
                let seg = (name, off, off + n);
                off += n;
                seg
            })
            .collect()
    }

    /// Returns `T' x M` log-probability rows.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &FeatureSeq,
        training: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, CrnnCache)> {
        if input.ncols() != self.config.input_bins {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} bins, got {}",
                self.config.input_bins,
                input.ncols()
            )));
        }
        let (mut x, cel_cache) = match &self.cel {
            Some(cel) => {
                let (y, c) = cel.forward(input)?;
                (y, Some(c))
            }
            None => (input.clone(), None),
        };
        let mut gru_caches = Vec::with_capacity(self.grus.len());
        for gru in &self.grus {
            let (h, c) = gru.forward(&x)?;
            let (h, mask) = dropout_apply(&h, self.config.dropout, rng, training)?;
            gru_caches.push((c, mask));
            x = h;
        }
        let (logits, dense_cache) = self.dense.forward(&x)?;
        let log_probs = log_softmax_rows(&logits);
        Ok((
            log_probs.clone(),
            CrnnCache {
                cel: cel_cache,
                grus: gru_caches,
                dense: dense_cache,
                log_probs,
            },
        ))
    }

    /// Inference-mode forward pass; a pure function of parameters and input.
    pub fn infer(&self, input: &FeatureSeq) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, false, &mut rng)?.0)
    }

    /// Back-propagates a gradient with respect to the output log-probabilities.
    pub fn backward(&self, cache: &CrnnCache, grad_log_probs: &Array2<f64>) -> Result<ParamGrad> {
        if grad_log_probs.dim() != cache.log_probs.dim() || cache.grus.len() != self.grus.len() {
            return Err(Error::ShapeMismatch("gradient does not match the cached forward pass".into()));
        }
        // through log-softmax: dz = g - softmax * rowsum(g)
        let row_sums = grad_log_probs.sum_axis(Axis(1));
        let mut dlogits = grad_log_probs.clone();
        for ((mut d, lp), s) in dlogits.rows_mut().into_iter().zip(cache.log_probs.rows()).zip(row_sums.iter()) {
            d.zip_mut_with(&lp, |g, l| *g -= l.exp() * s);
        }
        let (mut dx, dense_grads) = self.dense.backward(&cache.dense, &dlogits)?;
        let mut gru_grads = Vec::with_capacity(self.grus.len());
        for (gru, (c, mask)) in self.grus.iter().zip(&cache.grus).rev() {
            let dh = mask.backward(&dx);
            let (d, g) = gru.backward(c, &dh)?;
            gru_grads.push(g);
            dx = d;
        }
        gru_grads.reverse();
        let cel_grads = match (&self.cel, &cache.cel) {
            (Some(cel), Some(c)) => Some(cel.param_grads(c, &dx)?),
            (None, None) => None,
            _ => return Err(Error::ShapeMismatch("cache/model CEL mismatch".into())),
        };
        let mut parts: Vec<&dyn Parameterized> = Vec::new();
        if let Some(g) = &cel_grads {
            parts.push(g);
        }
        for g in &gru_grads {
            parts.push(g);
        }
        parts.push(&dense_grads);
        Ok(ParamGrad::from_parts(&parts))
    }
}

impl Parameterized for CrnnModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        if let Some(c) = &self.cel {
            v.extend(c.param_slices());
        }
        for g in &self.grus {
            v.extend(g.param_slices());
        }
        v.extend(self.dense.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        if let Some(c) = &mut self.cel {
            v.extend(c.param_slices_mut());
        }
        for g in &mut self.grus {
            v.extend(g.param_slices_mut());
        }
        v.extend(self.dense.param_slices_mut());
        v
    }
}
