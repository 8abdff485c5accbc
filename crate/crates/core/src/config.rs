//! The structured experiment file (TOML). Every section is optional and
//! falls back to the desk-scale defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, read_manifest, SplitSpec, SynthSpec, Utterance};
use crate::error::{Error, Result};
use crate::experiments::DecodeConfig;
use crate::frontend::StftConfig;
use crate::model::{CrnnConfig, PaddingMode};
use crate::optim::TrainSchedule;
use crate::train::Corpus;
use crate::Alphabet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seed replicas averaged per configuration.
    pub replicas: usize,
    /// Epoch whose CFV is compared across configurations.
    pub snapshot_epoch: usize,
    /// TSV manifest to train on instead of the synthetic corpus. Relative
    /// paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    pub synth: SynthSpec,
    pub split: SplitSpec,
    pub stft: StftConfig,
    pub model: CrnnConfig,
    pub schedule: TrainSchedule,
    pub decode: DecodeConfig,
    pub sweep: SweepConfig,
    pub dropout: DropoutStudy,
    pub thresholds: Thresholds,
}

/// Small single-layer model in the still-learning regime: no clipping, a
/// low learning rate and a blank-favouring output bias.
pub fn desk_model() -> CrnnConfig {
    CrnnConfig {
        filters: 100,
        gru_layers: 1,
        gru_hidden: 32,
        dropout: 0.0,
        blank_bias: 3.0,
        ..CrnnConfig::default()
    }
}

pub fn desk_schedule() -> TrainSchedule {
    TrainSchedule {
        learning_rate: 3e-4,
        momentum: 0.9,
        clip_norm: 1e9,
        epochs: 20,
        batch_size: 8,
        lr_decay: 1.0,
        warmup_steps: 0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replicas: 2,
            snapshot_epoch: 20,
            manifest: None,
            synth: SynthSpec::default(),
            split: SplitSpec::default(),
            stft: StftConfig::default(),
            model: desk_model(),
            schedule: desk_schedule(),
            decode: DecodeConfig::default(),
            sweep: SweepConfig::default(),
            dropout: DropoutStudy::default(),
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    /// Filter count held fixed by the kernel, padding and ablation runs.
    pub fixed_filters: usize,
    pub padding_modes: Vec<PaddingMode>,
    /// The two filter counts whose CFV gap scales the kernel and padding
    /// bounds.
    pub reference_filters: [usize; 2],
    pub weak_filters: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            filters: vec![1, 2, 5, 10, 20, 50, 100, 200],
            kernels: vec![5, 11],
            fixed_filters: 100,
            padding_modes: vec![PaddingMode::Valid, PaddingMode::Same],
            reference_filters: [10, 100],
            weak_filters: 1,
        }
    }
}

/// The dropout comparison trains on its own corpus with a small training
/// split, a large test split and a wider model, so that memorization is
/// possible and held-out novelty is measured on many utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutStudy {
    pub rates: Vec<f64>,
    pub synth: SynthSpec,
    pub split: SplitSpec,
    pub model: CrnnConfig,
    pub schedule: TrainSchedule,
}

impl Default for DropoutStudy {
    fn default() -> Self {
        Self {
            rates: vec![0.0, 0.25],
            synth: SynthSpec {
                count: 200,
                seed: 7,
                ..SynthSpec::default()
            },
            split: SplitSpec {
                ratios: [1, 1, 2],
                ..SplitSpec::default()
            },
            model: CrnnConfig {
                gru_hidden: 64,
                ..desk_model()
            },
            schedule: TrainSchedule {
                learning_rate: 1e-3,
                epochs: 60,
                ..desk_schedule()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Kernel spread and padding gap must stay below this fraction of the
    /// reference filter spread.
    pub spread_ratio: f64,
    /// Relative WER margin within which a weak CEL counts as no better than
    /// the baseline.
    pub ablation_margin: f64,
    pub min_spearman: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            spread_ratio: 0.25,
            ablation_margin: 0.10,
            min_spearman: 0.8,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config, overlaying whatever the file sets onto
    /// [`ExperimentConfig::default`] key by key, so a partial `[model]`
    /// section keeps the desk defaults for the keys it omits.
    pub fn from_toml(text: &str) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidConfig(e.to_string());
        let overlay: toml::Table = toml::from_str(text).map_err(|e| bad(&e))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| bad(&e))?;
        merge(&mut base, overlay);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| bad(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `manifest` is resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replicas must be at least 1".into()));
        }
        if self.snapshot_epoch == 0 {
            return Err(Error::InvalidConfig("snapshot_epoch must be at least 1".into()));
        }
        self.synth.validate()?;
        self.stft.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        self.dropout.synth.validate()?;
        self.dropout.model.validate()?;
        self.dropout.schedule.validate()?;
        if self.dropout.rates.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidConfig("dropout rates must be in [0, 1)".into()));
        }
        let t = &self.thresholds;
        if !(t.spread_ratio > 0.0 && t.ablation_margin >= 0.0 && (-1.0..=1.0).contains(&t.min_spearman)) {
            return Err(Error::InvalidConfig("thresholds out of range".into()));
        }
        Ok(())
    }

    /// The utterances named by `manifest`, or the synthetic corpus.
    pub fn utterances(&self) -> Result<Vec<Utterance>> {
        match &self.manifest {
            Some(path) => read_manifest(path),
            None => generate_synthetic(&self.synth),
        }
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::from_utterances(&self.utterances()?, &self.split, self.stft, Alphabet::english())
    }

    pub fn dropout_corpus(&self) -> Result<Corpus> {
        let utts = generate_synthetic(&self.dropout.synth)?;
        Corpus::from_utterances(&utts, &self.dropout.split, self.stft, Alphabet::english())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 9;
        cfg.sweep.filters = vec![1, 4];
        cfg.model.padding = PaddingMode::Same;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_override_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 4\n[model]\nfilters = 7\n[schedule]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.filters, 7);
        assert_eq!(cfg.model.gru_hidden, desk_model().gru_hidden);
        assert_eq!(cfg.schedule.epochs, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("replicas = 0").is_err());
        assert!(ExperimentConfig::from_toml("[model]\ndropout = 1.0").is_err());
        assert!(ExperimentConfig::from_toml("[dropout]\nrates = [0.0, 1.5]").is_err());
    }

    #[test]
    fn relative_manifest_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "manifest = \"data/m.tsv\"\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest.unwrap(), dir.path().join("data/m.tsv"));
    }
}
