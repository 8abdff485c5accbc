//! The training loop: shuffled mini-batches, Nesterov updates with gradient
//! clipping, and per-epoch validation CTC loss (CFV).

use std::time::Instant;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, Alphabet};
use crate::dataset::{is_feasible, make_batches, normalize_sets, prepare_examples, split_dataset, Batch, Example, SplitSpec, Utterance};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::frontend::{Frontend, NormStats, StftConfig};
use crate::model::{Checkpoint, CrnnConfig, CrnnModel};
use crate::nn::{ParamGrad, Parameterized};
use crate::optim::{clip_gradients, nesterov_step, NesterovState, TrainSchedule};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// A split, feature-extracted and normalized corpus. Statistics are fitted on
/// the training split only.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub norm: NormStats,
    pub stft: StftConfig,
    pub alphabet: Alphabet,
}

impl Corpus {
    pub fn from_utterances(utterances: &[Utterance], split: &SplitSpec, stft: StftConfig, alphabet: Alphabet) -> Result<Self> {
        let (train, dev, test) = split_dataset(utterances, split)?;
        Self::from_splits(&train, &dev, &test, stft, alphabet)
    }

    pub fn from_splits(
        train: &[Utterance],
        dev: &[Utterance],
        test: &[Utterance],
        stft: StftConfig,
        alphabet: Alphabet,
    ) -> Result<Self> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::EmptyDataset("train and dev splits must be non-empty".into()));
        }
        let fe = Frontend::new(stft)?;
        let mut train = prepare_examples(train, &fe, &alphabet)?;
        let mut dev = prepare_examples(dev, &fe, &alphabet)?;
        let mut test = prepare_examples(test, &fe, &alphabet)?;
        let fit = train.clone();
        let norm = normalize_sets(&fit, &mut [&mut train, &mut dev, &mut test])?;
        Ok(Self {
            train,
            dev,
            test,
            norm,
            stft,
            alphabet,
        })
    }

    /// Shortest utterance across all splits, in frames.
    pub fn min_frames(&self) -> Option<usize> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .map(|e| e.features.nrows())
            .min()
    }
}

/// CTC loss and parameter gradient for one utterance at its true length.
pub fn utterance_loss_and_grad(
    model: &CrnnModel,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    blank: usize,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamGrad)> {
    let (log_probs, cache) = model.forward(&features.to_owned(), training, rng)?;
    let (loss, grad) = ctc_loss(&log_probs, labels, blank)?;
    Ok((loss, model.backward(&cache, &grad)?))
}

/// Summed loss and gradient over a batch. Items are processed one at a time
/// at their true lengths, so padding never reaches the loss. Dropout for
/// item `i` draws from a stream keyed by `(seed, epoch, batch.indices[i])`.
pub fn batch_loss_and_grad(
    model: &CrnnModel,
    batch: &Batch,
    blank: usize,
    training: bool,
    seed: u64,
    epoch: u64,
) -> Result<(f64, ParamGrad)> {
    let mut total = 0.0;
    let mut grad = ParamGrad::zeros(model.num_params());
    for i in 0..batch.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[DROPOUT_STREAM, epoch, batch.indices[i] as u64]));
        let (loss, g) = utterance_loss_and_grad(model, batch.item(i), &batch.labels[i], blank, training, &mut rng)?;
        total += loss;
        grad.add_assign(&g);
    }
    Ok((total, grad))
}

/// Mean per-utterance CTC loss in inference mode over the feasible examples.
/// This is the CFV when applied to the validation split.
pub fn mean_ctc_loss(model: &CrnnModel, examples: &[Example], blank: usize) -> Result<f64> {
    let cfg = model.config();
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples {
        if !is_feasible(ex.features.nrows(), &ex.labels, |t| cfg.output_frames(t)) {
            continue;
        }
        let log_probs = model.infer(&ex.features)?;
        total += ctc_loss(&log_probs, &ex.labels, blank)?.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset("no example is long enough for its transcript".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation CTC loss.
    pub cfv: f64,
    pub skipped_steps: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn cfv_at(&self, epoch: usize) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == epoch).map(|r| r.cfv)
    }

    pub fn final_cfv(&self) -> Option<f64> {
        self.records.last().map(|r| r.cfv)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().min_by(|a, b| a.cfv.total_cmp(&b.cfv).then(a.epoch.cmp(&b.epoch)))
    }

    pub fn cfv_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cfv).collect()
    }

    /// Everything except wall-clock time, for reproducibility checks.
    pub fn losses(&self) -> Vec<(usize, f64, f64)> {
        self.records.iter().map(|r| (r.epoch, r.train_loss, r.cfv)).collect()
    }

    /// `epoch,train_loss,cfv,skipped_steps`; wall time is left out so reruns
    /// produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,cfv,skipped_steps\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.cfv, r.skipped_steps));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Parameters after the last epoch.
    pub last: Checkpoint,
    /// Parameters at the lowest validation CFV.
    pub best: Checkpoint,
}

/// Trains a freshly built model. The whole run is a deterministic function of
/// `(config, corpus, schedule, seed)`.
pub fn run_training(config: &CrnnConfig, corpus: &Corpus, schedule: &TrainSchedule, seed: u64) -> Result<TrainOutcome> {
    run_training_with(config, corpus, schedule, seed, |_| {})
}

/// [`run_training`] with a hook called after every epoch.
pub fn run_training_with(
    config: &CrnnConfig,
    corpus: &Corpus,
    schedule: &TrainSchedule,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate()?;
    if config.alphabet_size != corpus.alphabet.len() {
        return Err(Error::InvalidConfig(format!(
            "model has {} outputs but the alphabet has {} symbols",
            config.alphabet_size,
            corpus.alphabet.len()
        )));
    }
    let blank = corpus.alphabet.blank();
    let mut model = CrnnModel::build(config, seed)?;
    let mut state = NesterovState::new(model.num_params());
    let mut history = TrainHistory::default();
    let snapshot = |model: &CrnnModel, state: &NesterovState, epoch: usize| Checkpoint {
        model: model.clone(),
        optimizer: Some(state.clone()),
        norm: corpus.norm.clone(),
        stft: corpus.stft,
        epoch,
        seed,
    };
    let mut best = snapshot(&model, &state, 0);
    let mut best_cfv = f64::INFINITY;
    let shuffle_seed = derive_seed(seed, &[SHUFFLE_STREAM]);

    for epoch in 0..schedule.epochs {
        let start = Instant::now();
        let batches = make_batches(&corpus.train, schedule.batch_size, shuffle_seed, epoch as u64, |t| {
            config.output_frames(t)
        })?;
        if batches.is_empty() {
            return Err(Error::EmptyDataset("no training example is long enough for its transcript".into()));
        }
        let mut loss_sum = 0.0;
        let mut items = 0usize;
        let mut skipped = 0usize;
        for batch in &batches {
            let (loss, mut grad) = batch_loss_and_grad(&model, batch, blank, true, seed, epoch as u64)?;
            loss_sum += loss;
            items += batch.len();
            grad.scale(1.0 / batch.len() as f64);
            clip_gradients(&mut grad, schedule.clip_norm);
            let lr = schedule.step_learning_rate(epoch, state.step_count);
            match nesterov_step(model.param_slices_mut(), &grad, &mut state, lr, schedule.momentum) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient) => {
                    log::warn!("epoch {}: non-finite gradient, step skipped", epoch + 1);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let cfv = mean_ctc_loss(&model, &corpus.dev, blank)?;
        let train_loss = loss_sum / items as f64;
        if !cfv.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                detail: format!("train loss {train_loss}, validation CFV {cfv}"),
            });
        }
        if skipped == batches.len() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                detail: format!("all {skipped} steps had non-finite gradients"),
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss,
            cfv,
            skipped_steps: skipped,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}  train {:.4}  cfv {:.4}  ({:.1}s)",
            record.epoch,
            record.train_loss,
            record.cfv,
            record.wall_secs
        );
        on_epoch(&record);
        if cfv < best_cfv {
            best_cfv = cfv;
            best = snapshot(&model, &state, epoch + 1);
        }
        history.records.push(record);
    }
    let last = snapshot(&model, &state, schedule.epochs);
    Ok(TrainOutcome { history, last, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthSpec};

    fn tiny_corpus(count: usize) -> Corpus {
        let spec = SynthSpec {
            count,
            min_chars: 2,
            max_chars: 3,
            charset: "abc".into(),
            space_prob: 0.0,
            char_ms: 50.0,
            noise_std: 0.02,
            freq_jitter_hz: 0.0,
            amp_jitter: 0.0,
            seed: 5,
            ..Default::default()
        };
        let utts = generate_synthetic(&spec).unwrap();
        Corpus::from_utterances(&utts, &SplitSpec::default(), StftConfig::default(), Alphabet::english()).unwrap()
    }

    fn tiny_config() -> CrnnConfig {
        CrnnConfig {
            filters: 8,
            kernel: 3,
            gru_layers: 1,
            gru_hidden: 8,
            dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn padding_neutrality() {
        let corpus = tiny_corpus(20);
        let cfg = tiny_config();
        let model = CrnnModel::build(&cfg, 1).unwrap();
        let blank = corpus.alphabet.blank();
        let ex = &corpus.train[..3];
        let batches = make_batches(ex, 3, 0, 0, |t| cfg.output_frames(t)).unwrap();
        assert_eq!(batches.len(), 1);
        let (batched, grad) = batch_loss_and_grad(&model, &batches[0], blank, false, 0, 0).unwrap();
        let mut single = 0.0;
        let mut single_grad = ParamGrad::zeros(model.num_params());
        for e in ex {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (l, g) = utterance_loss_and_grad(&model, e.features.view(), &e.labels, blank, false, &mut rng).unwrap();
            single += l;
            single_grad.add_assign(&g);
        }
        assert!((batched - single).abs() < 1e-9, "{batched} vs {single}");
        for (a, b) in grad.as_slice().iter().zip(single_grad.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn training_reduces_cfv_and_is_deterministic() {
        let corpus = tiny_corpus(60);
        let cfg = tiny_config();
        let schedule = TrainSchedule {
            epochs: 20,
            batch_size: 4,
            learning_rate: 0.05,
            ..Default::default()
        };
        let a = run_training(&cfg, &corpus, &schedule, 3).unwrap();
        let b = run_training(&cfg, &corpus, &schedule, 3).unwrap();
        assert_eq!(a.history.losses(), b.history.losses());
        assert_eq!(a.last.model, b.last.model);
        let h = &a.history.records;
        assert_eq!(h.len(), 20);
        assert!(h.windows(2).all(|w| w[0].epoch < w[1].epoch));
        let first = h[0].train_loss;
        let last = h[19].train_loss;
        assert!(last < 0.5 * first, "train loss {first} -> {last}");
        let best = a.history.best().unwrap();
        assert_eq!(a.best.epoch, best.epoch);
        assert_eq!(mean_ctc_loss(&a.best.model, &corpus.dev, corpus.alphabet.blank()).unwrap(), best.cfv);
    }

    #[test]
    fn zero_learning_rate_keeps_cfv_constant() {
        let corpus = tiny_corpus(20);
        let cfg = CrnnConfig {
            dropout: 0.25,
            ..tiny_config()
        };
        let schedule = TrainSchedule {
            epochs: 3,
            learning_rate: 0.0,
            ..Default::default()
        };
        let out = run_training(&cfg, &corpus, &schedule, 0).unwrap();
        let c = out.history.cfv_curve();
        assert!(c.iter().all(|&v| v == c[0]));
    }

    #[test]
    fn momentum_free_training_matches_plain_sgd() {
        let corpus = tiny_corpus(20);
        let cfg = tiny_config();
        let schedule = TrainSchedule {
            epochs: 1,
            momentum: 0.0,
            batch_size: 4,
            clip_norm: 1e9,
            learning_rate: 0.05,
            ..Default::default()
        };
        let out = run_training(&cfg, &corpus, &schedule, 2).unwrap();
        let mut model = CrnnModel::build(&cfg, 2).unwrap();
        let blank = corpus.alphabet.blank();
        let shuffle = derive_seed(2, &[SHUFFLE_STREAM]);
        for batch in make_batches(&corpus.train, 4, shuffle, 0, |t| cfg.output_frames(t)).unwrap() {
            let (_, mut g) = batch_loss_and_grad(&model, &batch, blank, true, 2, 0).unwrap();
            g.scale(1.0 / batch.len() as f64);
            let mut flat = model.flat_params();
            for (p, d) in flat.iter_mut().zip(g.as_slice()) {
                *p -= 0.05 * d;
            }
            model.set_flat_params(&flat);
        }
        assert_eq!(out.last.model.flat_params(), model.flat_params());
    }

    #[test]
    fn alphabet_mismatch_is_config_error() {
        let corpus = tiny_corpus(20);
        let cfg = CrnnConfig {
            alphabet_size: 29,
            ..tiny_config()
        };
        let schedule = TrainSchedule::default();
        assert!(matches!(run_training(&cfg, &corpus, &schedule, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let corpus = tiny_corpus(20);
        let cfg = tiny_config();
        let schedule = TrainSchedule {
            epochs: 10,
            learning_rate: 1e300,
            clip_norm: 1e300,
            momentum: 0.0,
            ..Default::default()
        };
        match run_training(&cfg, &corpus, &schedule, 0) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
