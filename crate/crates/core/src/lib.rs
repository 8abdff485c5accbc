//! A small end-to-end speech recognizer built around a Convolutional
//! Embedding Layer (CEL) feeding a stack of bidirectional GRUs trained with
//! CTC, plus the experiment harness used to study how the CEL's number of
//! filters shapes training dynamics and accuracy.
//!
//! Everything is computed in `f64` on the CPU with hand-written backward
//! passes. The layers are deliberately small and explicit; see [`nn`] for the
//! building blocks and [`model`] for how they are assembled.

pub mod config;
pub mod ctc;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod train;

pub use ctc::{Alphabet, CharNGramLm};
pub use error::{Error, Result};
pub use frontend::{AudioClip, NormStats, Spectrogram, StftConfig};
pub use model::{CrnnConfig, CrnnModel, CseConfig, CseModel, PaddingMode};
pub use nn::{FeatureSeq, ParamGrad};
pub use optim::{NesterovState, TrainSchedule};

/// Derives an independent stream seed from a base seed and a path of
/// indices (SplitMix64 finalizer applied per step).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0x2545_f491_4f6c_dd1d))
    })
}
