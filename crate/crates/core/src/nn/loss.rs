use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// `-sum(y_i * ln(p_i))` for a one-hot target, with the combined
/// softmax + cross-entropy logit gradient `p - y`.
pub fn cross_entropy_loss(probs: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    if probs.len() != target.len() {
        return Err(Error::ShapeMismatch("probabilities and target differ in length".into()));
    }
    let ones = target.iter().filter(|&&v| v == 1.0).count();
    let zeros = target.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != target.len() {
        return Err(Error::InvalidConfig("target must be one-hot".into()));
    }
    let idx = target.iter().position(|&v| v == 1.0).expect("checked above");
    let loss = -probs[idx].ln();
    Ok((loss, &probs - &target))
}
