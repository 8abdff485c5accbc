//! Decoding, evaluation and the sweep/ablation harness.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctc::{beam_decode, greedy_decode, Alphabet, BeamOptions, CharNGramLm};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::frontend::{normalize, AudioClip, Frontend};
use crate::metrics::{char_edit_stats, word_edit_stats, EditStats};
use crate::model::{Checkpoint, CrnnConfig, CrnnModel, PaddingMode};
use crate::optim::TrainSchedule;
use crate::train::{run_training, Corpus, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Greedy,
    Beam { opts: BeamOptions, lm: Option<CharNGramLm> },
}

impl Decoder {
    pub fn decode(&self, log_probs: &ndarray::Array2<f64>, alphabet: &Alphabet) -> Result<String> {
        match self {
            Decoder::Greedy => Ok(greedy_decode(log_probs, alphabet)),
            Decoder::Beam { opts, lm } => beam_decode(log_probs, alphabet, opts, lm.as_ref()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub words: EditStats,
    pub chars: EditStats,
    /// `(reference, hypothesis)` per utterance.
    pub transcripts: Vec<(String, String)>,
}

impl EvalReport {
    pub fn wer(&self) -> f64 {
        self.words.error_rate()
    }

    pub fn cer(&self) -> f64 {
        self.chars.error_rate()
    }
}

/// Decodes every example and scores it against its transcript. Examples too
/// short to produce any output frame count as empty hypotheses.
pub fn evaluate(model: &CrnnModel, examples: &[Example], alphabet: &Alphabet, decoder: &Decoder) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let mut words = EditStats::default();
    let mut chars = EditStats::default();
    let mut transcripts = Vec::with_capacity(examples.len());
    for ex in examples {
        let hyp = match model.config().output_frames(ex.features.nrows()) {
            Some(t) if t > 0 => decoder.decode(&model.infer(&ex.features)?, alphabet)?,
            _ => String::new(),
        };
        words.merge(&word_edit_stats(&ex.transcript, &hyp)?);
        chars.merge(&char_edit_stats(&ex.transcript, &hyp)?);
        transcripts.push((ex.transcript.clone(), hyp));
    }
    Ok(EvalReport { words, chars, transcripts })
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// column is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::TooFew { needed: 2, got: x.len() });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    pub insertion_bonus: f64,
    pub lm_order: usize,
    pub lm_add_k: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 8,
            lm_weight: 0.3,
            insertion_bonus: 0.0,
            lm_order: 3,
            lm_add_k: 0.5,
        }
    }
}

impl DecodeConfig {
    /// Beam decoder with an LM trained on `transcripts`, or plain beam search
    /// when `lm_weight` is zero.
    pub fn beam_decoder<'a>(&self, transcripts: impl IntoIterator<Item = &'a str>, alphabet: &Alphabet) -> Result<Decoder> {
        let opts = BeamOptions {
            beam_width: self.beam_width,
            lm_weight: self.lm_weight,
            insertion_bonus: self.insertion_bonus,
        };
        let lm = if self.lm_weight > 0.0 {
            Some(CharNGramLm::train(transcripts, self.lm_order, self.lm_add_k, alphabet.clone())?)
        } else {
            None
        };
        Ok(Decoder::Beam { opts, lm })
    }
}

/// Runs the acoustic model on a raw clip using the checkpoint's frontend and
/// normalization, then decodes.
pub fn transcribe_clip(ckpt: &Checkpoint, clip: &AudioClip, alphabet: &Alphabet, decoder: &Decoder) -> Result<String> {
    let spec = Frontend::new(ckpt.stft)?.spectrogram(clip)?;
    let feats = normalize(&spec, &ckpt.norm)?.into_frames();
    let log_probs = ckpt.model.infer(&feats)?;
    decoder.decode(&log_probs, alphabet)
}

/// One trained configuration, averaged over seed replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub experiment: String,
    pub label: String,
    pub config: CrnnConfig,
    pub params: usize,
    pub replicas: usize,
    /// Mean validation CFV per epoch.
    pub cfv_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
    /// Mean CFV at the snapshot epoch (or the last epoch if training was
    /// shorter).
    pub cfv_snapshot: f64,
    pub snapshot_epoch: usize,
    /// Mean test-split WER and CER of the final parameters.
    pub wer: f64,
    pub cer: f64,
}

pub struct Trained {
    pub result: SweepResult,
    pub outcomes: Vec<TrainOutcome>,
}

/// Shared protocol for every experiment: one corpus, one schedule, a base
/// seed and a replica count. Replica `r` trains with seed `seed + r`.
#[derive(Debug, Clone)]
pub struct Harness<'a> {
    pub corpus: &'a Corpus,
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub replicas: usize,
    pub snapshot_epoch: usize,
    pub decoder: Decoder,
    /// Results keyed by config fingerprint, so a configuration shared by
    /// several experiments trains once.
    memo: RefCell<BTreeMap<String, SweepResult>>,
}

impl<'a> Harness<'a> {
    pub fn new(corpus: &'a Corpus, schedule: TrainSchedule, seed: u64) -> Self {
        Self {
            corpus,
            snapshot_epoch: schedule.epochs,
            schedule,
            seed,
            replicas: 1,
            decoder: Decoder::Greedy,
            memo: RefCell::default(),
        }
    }

    /// Every distinct configuration trained so far, in fingerprint order.
    pub fn trained(&self) -> Vec<SweepResult> {
        self.memo.borrow().values().cloned().collect()
    }

    pub fn train(&self, experiment: &str, label: &str, config: &CrnnConfig) -> Result<Trained> {
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replicas must be at least 1".into()));
        }
        let epochs = self.schedule.epochs;
        if epochs == 0 {
            return Err(Error::InvalidConfig("experiments need at least one epoch".into()));
        }
        let mut cfv_curve = vec![0.0; epochs];
        let mut train_curve = vec![0.0; epochs];
        let (mut wer, mut cer) = (0.0, 0.0);
        let mut outcomes = Vec::with_capacity(self.replicas);
        let k = self.replicas as f64;
        for r in 0..self.replicas {
            let seed = self.seed.wrapping_add(r as u64);
            log::info!("{experiment}/{label}: replica {} (seed {seed})", r + 1);
            let out = run_training(config, self.corpus, &self.schedule, seed)?;
            for (i, rec) in out.history.records.iter().enumerate() {
                cfv_curve[i] += rec.cfv / k;
                train_curve[i] += rec.train_loss / k;
            }
            let report = evaluate(&out.last.model, &self.corpus.test, &self.corpus.alphabet, &self.decoder)?;
            wer += report.wer() / k;
            cer += report.cer() / k;
            outcomes.push(out);
        }
        let snapshot_epoch = self.snapshot_epoch.clamp(1, epochs);
        let model = &outcomes[0].last.model;
        Ok(Trained {
            result: SweepResult {
                experiment: experiment.to_string(),
                label: label.to_string(),
                config: config.clone(),
                params: model.count_params().total(),
                replicas: self.replicas,
                cfv_snapshot: cfv_curve[snapshot_epoch - 1],
                snapshot_epoch,
                cfv_curve,
                train_curve,
                wer,
                cer,
            },
            outcomes,
        })
    }

    fn run(&self, experiment: &str, label: &str, config: &CrnnConfig) -> Result<SweepResult> {
        let key = config.fingerprint();
        let cached = self.memo.borrow().get(&key).cloned();
        let result = match cached {
            Some(r) => r,
            None => {
                let r = self.train(experiment, label, config)?.result;
                self.memo.borrow_mut().insert(key, r.clone());
                r
            }
        };
        Ok(SweepResult {
            experiment: experiment.to_string(),
            label: label.to_string(),
            ..result
        })
    }

    /// Trains `base` once per filter count.
    pub fn filter_sweep(&self, base: &CrnnConfig, filters: &[usize]) -> Result<FilterSweep> {
        if filters.is_empty() {
            return Err(Error::TooFew { needed: 1, got: 0 });
        }
        let rows = filters
            .iter()
            .map(|&n| {
                let cfg = CrnnConfig {
                    use_cel: true,
                    filters: n,
                    ..base.clone()
                };
                self.run("filters", &format!("N={n}"), &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let spearman = if rows.len() >= 2 {
            let n: Vec<f64> = rows.iter().map(|r| r.config.filters as f64).collect();
            let c: Vec<f64> = rows.iter().map(|r| r.cfv_snapshot).collect();
            spearman(&n, &c)?
        } else {
            None
        };
        Ok(FilterSweep { rows, spearman })
    }

    /// Trains `base` with `filters` filters for each kernel size. Kernels
    /// longer than the shortest utterance are skipped with a warning.
    pub fn kernel_compare(&self, base: &CrnnConfig, kernels: &[usize], filters: usize) -> Result<KernelCompare> {
        if kernels.len() < 2 {
            return Err(Error::TooFew {
                needed: 2,
                got: kernels.len(),
            });
        }
        let shortest = self.corpus.min_frames().unwrap_or(0);
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for &k in kernels {
            if k > shortest {
                log::warn!("skipping kernel {k}: shortest utterance has {shortest} frames");
                skipped.push(k);
                continue;
            }
            let cfg = CrnnConfig {
                use_cel: true,
                filters,
                kernel: k,
                ..base.clone()
            };
            rows.push(self.run("kernels", &format!("K={k}"), &cfg)?);
        }
        let spread = spread(rows.iter().map(|r| r.cfv_snapshot));
        Ok(KernelCompare { rows, spread, skipped })
    }

    pub fn padding_compare(&self, base: &CrnnConfig, modes: &[PaddingMode]) -> Result<PaddingCompare> {
        if modes.is_empty() {
            return Err(Error::TooFew { needed: 1, got: 0 });
        }
        let rows = modes
            .iter()
            .map(|&m| {
                let cfg = CrnnConfig {
                    use_cel: true,
                    padding: m,
                    ..base.clone()
                };
                self.run("padding", &m.to_string(), &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let max_gap = (rows.len() >= 2).then(|| max_curve_gap(rows.iter().map(|r| r.cfv_curve.as_slice())));
        Ok(PaddingCompare { rows, max_gap })
    }

    /// Trains `base` with a CEL of `filters` filters and the same model with
    /// the CEL removed.
    pub fn cel_ablation(&self, base: &CrnnConfig, filters: usize) -> Result<CelAblation> {
        let with = CrnnConfig {
            use_cel: true,
            filters,
            ..base.clone()
        };
        let without = CrnnConfig {
            use_cel: false,
            ..base.clone()
        };
        Ok(CelAblation {
            cel: self.run("ablation", &format!("cel N={filters}"), &with)?,
            baseline: self.run("ablation", "no-cel", &without)?,
        })
    }

    pub fn dropout_compare(&self, base: &CrnnConfig, rates: &[f64]) -> Result<Vec<SweepResult>> {
        let configs = rates
            .iter()
            .map(|&p| {
                let cfg = CrnnConfig {
                    dropout: p,
                    ..base.clone()
                };
                cfg.validate().map(|_| cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        configs
            .iter()
            .map(|cfg| self.run("dropout", &format!("p={}", cfg.dropout), cfg))
            .collect()
    }
}

fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Largest per-epoch spread among curves, over their common length.
pub fn max_curve_gap<'c>(curves: impl IntoIterator<Item = &'c [f64]>) -> f64 {
    let curves: Vec<&[f64]> = curves.into_iter().collect();
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len).map(|e| spread(curves.iter().map(|c| c[e]))).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSweep {
    pub rows: Vec<SweepResult>,
    /// Spearman(N, CFV at the snapshot epoch); `None` for a single row or a
    /// constant column.
    pub spearman: Option<f64>,
}

impl FilterSweep {
    /// `|CFV(a) - CFV(b)|` at the snapshot epoch, if both counts were run.
    pub fn spread_between(&self, a: usize, b: usize) -> Option<f64> {
        let get = |n| self.rows.iter().find(|r| r.config.filters == n).map(|r| r.cfv_snapshot);
        Some((get(a)? - get(b)?).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCompare {
    pub rows: Vec<SweepResult>,
    /// Max minus min snapshot CFV across kernels.
    pub spread: f64,
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddingCompare {
    pub rows: Vec<SweepResult>,
    /// Largest per-epoch CFV gap between modes; `None` for a single mode.
    pub max_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CelAblation {
    pub cel: SweepResult,
    pub baseline: SweepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub pairs: Vec<(f64, f64)>,
    /// `None` when either column is constant.
    pub spearman: Option<f64>,
}

pub const MIN_CORRELATION_PAIRS: usize = 5;

/// Spearman correlation between snapshot CFV and final WER across results.
pub fn cfv_wer_correlation(rows: &[SweepResult]) -> Result<Correlation> {
    correlate_pairs(rows.iter().map(|r| (r.cfv_snapshot, r.wer)).collect())
}

pub const RESULTS_HEADER: &str = "experiment,label,fingerprint,use_cel,filters,kernel,stride,padding,dropout,gru_layers,gru_hidden,params,replicas,snapshot_epoch,cfv_snapshot,final_cfv,wer,cer";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per configuration. Floats use the shortest round-trip form so
/// reruns are byte-identical.
pub fn results_csv(rows: &[SweepResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let c = &r.config;
        let line = [
            csv_field(&r.experiment),
            csv_field(&r.label),
            c.fingerprint(),
            c.use_cel.to_string(),
            if c.use_cel { c.filters.to_string() } else { "0".into() },
            c.kernel.to_string(),
            c.stride.to_string(),
            c.padding.to_string(),
            c.dropout.to_string(),
            c.gru_layers.to_string(),
            c.gru_hidden.to_string(),
            r.params.to_string(),
            r.replicas.to_string(),
            r.snapshot_epoch.to_string(),
            r.cfv_snapshot.to_string(),
            r.cfv_curve.last().copied().unwrap_or(f64::NAN).to_string(),
            r.wer.to_string(),
            r.cer.to_string(),
        ];
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Long-format learning curves: `experiment,label,fingerprint,epoch,train_loss,cfv`.
pub fn curves_csv(rows: &[SweepResult]) -> String {
    let mut out = String::from("experiment,label,fingerprint,epoch,train_loss,cfv\n");
    for r in rows {
        for (i, (t, v)) in r.train_curve.iter().zip(&r.cfv_curve).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{t},{v}\n",
                csv_field(&r.experiment),
                csv_field(&r.label),
                r.config.fingerprint(),
                i + 1
            ));
        }
    }
    out
}

/// A gnuplot script plotting one CFV curve per label from a curves CSV.
pub fn gnuplot_script(curves_file: &str, labels: &[String], title: &str) -> String {
    let mut s = format!(
        "set datafile separator ','\nset title \"{title}\"\nset xlabel 'epoch'\nset ylabel 'validation CTC loss (CFV)'\nset key outside\nplot \\\n"
    );
    let plots: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            format!(
                "  '{curves_file}' every ::1 using ($2 eq \"{l}\" ? $4 : 1/0):6 with linespoints title \"{l}\" lt {}",
                i + 1
            )
        })
        .collect();
    s.push_str(&plots.join(", \\\n"));
    s.push('\n');
    s
}

/// Writes `<stem>.csv`, `<stem>_curves.csv` and `<stem>.gp` into `dir`.
pub fn write_report(dir: &Path, stem: &str, rows: &[SweepResult]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curves_name = format!("{stem}_curves.csv");
    let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let files = [
        (format!("{stem}.csv"), results_csv(rows)),
        (curves_name.clone(), curves_csv(rows)),
        (format!("{stem}.gp"), gnuplot_script(&curves_name, &labels, stem)),
    ];
    files
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// `cfv,wer` scatter for a correlation run.
pub fn correlation_csv(c: &Correlation) -> String {
    let mut out = String::from("cfv,wer\n");
    for (x, y) in &c.pairs {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

/// Reads `(cfv_snapshot, wer)` pairs back from a results CSV.
pub fn read_results_pairs(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = split_csv_line(lines.next().ok_or_else(|| Error::Parse("empty results file".into()))?);
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("results file has no {name:?} column")))
    };
    let (ci, wi) = (col("cfv_snapshot")?, col("wer")?);
    lines
        .enumerate()
        .map(|(i, line)| {
            let f = split_csv_line(line);
            let num = |j: usize| -> Result<f64> {
                f.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("row {}: bad or missing value", i + 2)))
            };
            Ok((num(ci)?, num(wi)?))
        })
        .collect()
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                chars.next();
                out.last_mut().unwrap().push('"');
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(String::new()),
            c => out.last_mut().unwrap().push(c),
        }
    }
    out
}

/// Spearman over pairs read from a results file.
pub fn correlate_pairs(pairs: Vec<(f64, f64)>) -> Result<Correlation> {
    if pairs.len() < MIN_CORRELATION_PAIRS {
        return Err(Error::TooFew {
            needed: MIN_CORRELATION_PAIRS,
            got: pairs.len(),
        });
    }
    let (c, w): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(Correlation {
        spearman: spearman(&c, &w)?,
        pairs,
    })
}
