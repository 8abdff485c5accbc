use ndarray::Array2;
use rand::Rng;

use super::FeatureSeq;
use crate::error::{Error, Result};

/// Per-entry multipliers: `0` for dropped units, `1 / (1 - rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMask {
    Identity,
    Scale(Array2<f64>),
}

impl DropoutMask {
    pub fn backward(&self, grad_out: &FeatureSeq) -> FeatureSeq {
        match self {
            DropoutMask::Identity => grad_out.clone(),
            DropoutMask::Scale(m) => grad_out * m,
        }
    }
}

/// Inverted dropout. At inference (`training == false`) or with `rate == 0`
/// the input passes through untouched and no randomness is consumed.
pub fn dropout_apply<R: Rng + ?Sized>(
    input: &FeatureSeq,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(FeatureSeq, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), DropoutMask::Identity));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask = Array2::from_shape_simple_fn(input.raw_dim(), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    });
    Ok((input * &mask, DropoutMask::Scale(mask)))
}
