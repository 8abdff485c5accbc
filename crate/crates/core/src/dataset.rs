//! Corpus handling: utterances and manifests, the 8:1:1 split, transcript
//! encoding, padded batches, and a synthetic two-tone corpus small enough to
//! train on in minutes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::{min_frames, Alphabet};
use crate::error::{Error, Result};
use crate::frontend::{fit_normalization_stats, normalize, read_wav, write_wav, AudioClip, Frontend, NormStats, Spectrogram};
use crate::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    Clip(AudioClip),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioSource,
    pub transcript: String,
}

impl Utterance {
    pub fn new(id: impl Into<String>, audio: AudioSource, transcript: impl Into<String>) -> Result<Self> {
        let transcript = transcript.into();
        if transcript.trim().is_empty() {
            return Err(Error::EmptyLabel);
        }
        Ok(Self {
            id: id.into(),
            audio,
            transcript,
        })
    }

    pub fn load_audio(&self) -> Result<AudioClip> {
        match &self.audio {
            AudioSource::Clip(c) => Ok(c.clone()),
            AudioSource::File(p) => read_wav(p),
        }
    }
}

/// Lowercases, maps out-of-alphabet characters to `<UNK>`, never emits blank.
pub fn encode_transcript(text: &str, alphabet: &Alphabet) -> Result<Vec<usize>> {
    alphabet.encode(text)
}

/// Reads a `wav-path<TAB>transcript` manifest. Relative paths resolve against
/// the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (wav, transcript) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("{}:{}: expected wav-path<TAB>transcript", path.display(), lineno + 1)))?;
        let wav_path = base.join(wav);
        let id = Path::new(wav)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("utt{lineno}"));
        let utt = Utterance::new(id, AudioSource::File(wav_path), transcript)
            .map_err(|_| Error::Parse(format!("{}:{}: empty transcript", path.display(), lineno + 1)))?;
        out.push(utt);
    }
    Ok(out)
}

/// Writes every utterance as `<dir>/<id>.wav` plus `<dir>/manifest.tsv`.
pub fn write_corpus(dir: impl AsRef<Path>, utterances: &[Utterance]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for u in utterances {
        let name = format!("{}.wav", u.id);
        write_wav(dir.join(&name), &u.load_audio()?)?;
        manifest.push_str(&name);
        manifest.push('\t');
        manifest.push_str(&u.transcript);
        manifest.push('\n');
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Split ratios (train:dev:test) and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [8, 1, 1], seed: 0 }
    }
}

pub const MIN_SPLIT_SIZE: usize = 10;

/// Shuffles with the seed, then takes `floor` shares for dev and test and
/// leaves the remainder to train.
pub fn split_dataset<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < MIN_SPLIT_SIZE {
        return Err(Error::TooFew {
            needed: MIN_SPLIT_SIZE,
            got: items.len(),
        });
    }
    let total: u32 = spec.ratios.iter().sum();
    if total == 0 {
        return Err(Error::InvalidConfig("split ratios must not all be zero".into()));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_dev = n * spec.ratios[1] as usize / total as usize;
    let n_test = n * spec.ratios[2] as usize / total as usize;
    let n_train = n - n_dev - n_test;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

/// An utterance after feature extraction and label encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub transcript: String,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

pub fn prepare_examples(utterances: &[Utterance], frontend: &Frontend, alphabet: &Alphabet) -> Result<Vec<Example>> {
    utterances
        .iter()
        .map(|u| {
            let spec = frontend.spectrogram(&u.load_audio()?)?;
            Ok(Example {
                id: u.id.clone(),
                transcript: u.transcript.clone(),
                features: spec.into_frames(),
                labels: encode_transcript(&u.transcript, alphabet)?,
            })
        })
        .collect()
}

/// Fits per-bin statistics on `fit_on` and applies them to every set.
pub fn normalize_sets(fit_on: &[Example], sets: &mut [&mut Vec<Example>]) -> Result<NormStats> {
    let specs = fit_on
        .iter()
        .map(|e| Spectrogram::new(e.features.clone()))
        .collect::<Result<Vec<_>>>()?;
    let stats = fit_normalization_stats(specs.iter())?;
    for set in sets.iter_mut() {
        for ex in set.iter_mut() {
            ex.features = normalize(&Spectrogram::new(std::mem::take(&mut ex.features))?, &stats)?.into_frames();
        }
    }
    Ok(stats)
}

/// A zero-padded mini-batch. `features` is `B x T_max x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array3<f64>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
    pub label_lengths: Vec<usize>,
    /// Position of each item in the source example list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Item `i` truncated to its true length.
    pub fn item(&self, i: usize) -> ArrayView2<'_, f64> {
        self.features.slice(s![i, ..self.lengths[i], ..])
    }

    fn collate(examples: &[Example], indices: &[usize]) -> Self {
        let bins = examples[indices[0]].features.ncols();
        let t_max = indices.iter().map(|&i| examples[i].features.nrows()).max().unwrap_or(0);
        let mut features = Array3::zeros((indices.len(), t_max, bins));
        for (b, &i) in indices.iter().enumerate() {
            let f = &examples[i].features;
            features.slice_mut(s![b, ..f.nrows(), ..]).assign(f);
        }
        Self {
            features,
            lengths: indices.iter().map(|&i| examples[i].features.nrows()).collect(),
            labels: indices.iter().map(|&i| examples[i].labels.clone()).collect(),
            label_lengths: indices.iter().map(|&i| examples[i].labels.len()).collect(),
            indices: indices.to_vec(),
        }
    }
}

/// Whether the model's output length for `frames` input frames can emit
/// `labels` under CTC.
pub fn is_feasible(frames: usize, labels: &[usize], output_frames: impl Fn(usize) -> Option<usize>) -> bool {
    output_frames(frames).is_some_and(|t| t >= min_frames(labels))
}

/// Shuffles the examples with a stream derived from `(seed, epoch)` and
/// groups them into batches. Items too short for their transcript are
/// skipped with a warning.
pub fn make_batches(
    examples: &[Example],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    output_frames: impl Fn(usize) -> Option<usize>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len())
        .filter(|&i| {
            let ex = &examples[i];
            let ok = is_feasible(ex.features.nrows(), &ex.labels, &output_frames);
            if !ok {
                log::warn!(
                    "skipping {}: {} frames cannot carry {} labels",
                    ex.id,
                    ex.features.nrows(),
                    ex.labels.len()
                );
            }
            ok
        })
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch])));
    Ok(order.chunks(batch_size).map(|c| Batch::collate(examples, c)).collect())
}

/// Synthetic corpus parameters. Each symbol is rendered as a Hann-tapered
/// sum of two sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub char_ms: f64,
    /// Silence (noise only) before and after the characters.
    pub pad_ms: f64,
    pub sample_rate_hz: u32,
    /// Letters drawn for the transcripts; spaces are inserted separately.
    pub charset: String,
    /// Chance of a word break after each non-final character.
    pub space_prob: f64,
    pub noise_std: f64,
    /// Each utterance shifts all of its tones by a uniform offset in
    /// `[-freq_jitter_hz, freq_jitter_hz]`.
    pub freq_jitter_hz: f64,
    /// Per-character amplitude drawn uniformly from `[1 - amp_jitter, 1]`.
    pub amp_jitter: f64,
    /// Explicit `(symbol, f1, f2)` table; empty uses [`default_tones`].
    pub tones: Vec<(char, f64, f64)>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 300,
            min_chars: 3,
            max_chars: 8,
            char_ms: 100.0,
            pad_ms: 0.0,
            sample_rate_hz: 16_000,
            charset: ('a'..='z').collect(),
            space_prob: 0.15,
            noise_std: 0.2,
            freq_jitter_hz: 50.0,
            amp_jitter: 0.3,
            tones: Vec::new(),
            seed: 0,
        }
    }
}

/// Two-tone codes for `a`-`z`, apostrophe and space. The low tone walks
/// 300..3000 Hz in 100 Hz steps and the high tone is a stride-11 permutation
/// of 4000..6700 Hz, so all 56 frequencies are distinct and sit on STFT bin
/// centres at the default 100 Hz resolution.
pub fn default_tones() -> Vec<(char, f64, f64)> {
    let symbols = ('a'..='z').chain(['\'', ' ']);
    symbols
        .enumerate()
        .map(|(i, c)| (c, 300.0 + 100.0 * i as f64, 4000.0 + 100.0 * ((i * 11) % 28) as f64))
        .collect()
}

impl SynthSpec {
    pub fn tone_table(&self) -> Vec<(char, f64, f64)> {
        if self.tones.is_empty() {
            default_tones()
        } else {
            self.tones.clone()
        }
    }

    pub fn samples_per_char(&self) -> usize {
        (self.char_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn pad_samples(&self) -> usize {
        (self.pad_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.pad_ms >= 0.0 && self.pad_ms.is_finite()) {
            return bad("pad_ms must be non-negative".into());
        }
        if self.min_chars == 0 || self.min_chars > self.max_chars {
            return bad(format!("invalid char range {}..={}", self.min_chars, self.max_chars));
        }
        if self.sample_rate_hz == 0 || self.samples_per_char() == 0 {
            return bad("character duration must cover at least one sample".into());
        }
        if !(0.0..=1.0).contains(&self.space_prob) || !(0.0..1.0).contains(&self.amp_jitter) {
            return bad("space_prob must be in [0, 1] and amp_jitter in [0, 1)".into());
        }
        if !(self.noise_std >= 0.0) || !(self.freq_jitter_hz >= 0.0) {
            return bad("noise_std and freq_jitter_hz must be non-negative".into());
        }
        let tones = self.tone_table();
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        for (i, &(c, f1, f2)) in tones.iter().enumerate() {
            if f1.min(f2) - self.freq_jitter_hz <= 0.0 || f1.max(f2) + self.freq_jitter_hz >= nyquist {
                return bad(format!("tones for {c:?} fall outside (0, {nyquist}) Hz"));
            }
            if tones[..i].iter().any(|&(d, g1, g2)| d == c || (g1, g2) == (f1, f2)) {
                return bad(format!("tone table repeats {c:?} or its frequency pair"));
            }
        }
        if self.charset.is_empty() {
            return bad("charset is empty".into());
        }
        let needed = self.charset.chars().chain((self.space_prob > 0.0).then_some(' '));
        for c in needed {
            if !tones.iter().any(|t| t.0 == c) {
                return bad(format!("no tones assigned to {c:?}"));
            }
        }
        Ok(())
    }

    /// Renders `text` with the given per-utterance frequency offset.
    pub fn render<R: Rng + ?Sized>(&self, text: &str, offset_hz: f64, rng: &mut R) -> Result<AudioClip> {
        let tones = self.tone_table();
        let n = self.samples_per_char();
        let sr = self.sample_rate_hz as f64;
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let pad = self.pad_samples();
        let mut samples = Vec::with_capacity(n * text.chars().count() + 2 * pad);
        samples.resize(pad, 0.0);
        for c in text.chars() {
            let &(_, f1, f2) = tones
                .iter()
                .find(|t| t.0 == c)
                .ok_or_else(|| Error::InvalidConfig(format!("no tones assigned to {c:?}")))?;
            let amp = if self.amp_jitter > 0.0 {
                rng.random_range(1.0 - self.amp_jitter..=1.0)
            } else {
                1.0
            };
            let (f1, f2) = (f1 + offset_hz, f2 + offset_hz);
            for i in 0..n {
                let t = i as f64 / sr;
                let env = 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos();
                let tone = 0.4 * amp * env * ((2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin());
                samples.push(tone);
            }
        }
        samples.resize(samples.len() + pad, 0.0);
        if self.noise_std > 0.0 {
            for s in &mut samples {
                *s += noise.sample(rng);
            }
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        AudioClip::new(samples, self.sample_rate_hz)
    }

    fn random_text<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let letters: Vec<char> = self.charset.chars().collect();
        let len = rng.random_range(self.min_chars..=self.max_chars);
        let mut s = String::with_capacity(len);
        let mut count = 0;
        while count < len {
            s.push(letters[rng.random_range(0..letters.len())]);
            count += 1;
            if count + 1 < len && rng.random_bool(self.space_prob) {
                s.push(' ');
                count += 1;
            }
        }
        s
    }
}

/// Draws `spec.count` random transcripts and renders them. Deterministic in
/// `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.count.to_string().len();
    (0..spec.count)
        .map(|i| {
            let text = spec.random_text(&mut rng);
            let offset = if spec.freq_jitter_hz > 0.0 {
                rng.random_range(-spec.freq_jitter_hz..=spec.freq_jitter_hz)
            } else {
                0.0
            };
            let clip = spec.render(&text, offset, &mut rng)?;
            Utterance::new(format!("synth{i:0width$}"), AudioSource::Clip(clip), text)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::StftConfig;

    fn utts(n: usize) -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                Utterance::new(
                    format!("u{i}"),
                    AudioSource::Clip(AudioClip::new(vec![0.0; 400 + 80 * i], 16_000).unwrap()),
                    "ab",
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn split_100_is_80_10_10() {
        let items: Vec<usize> = (0..100).collect();
        let (tr, dv, te) = split_dataset(&items, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (80, 10, 10));
    }

    #[test]
    fn split_floor_for_dev_and_test() {
        let items: Vec<usize> = (0..19).collect();
        let (tr, dv, te) = split_dataset(&items, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (17, 1, 1));
    }

    #[test]
    fn split_rejects_small_corpus() {
        let items: Vec<usize> = (0..9).collect();
        assert!(matches!(
            split_dataset(&items, &SplitSpec::default()),
            Err(Error::TooFew { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn split_seed_behaviour() {
        let items: Vec<usize> = (0..50).collect();
        let a = split_dataset(&items, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        let b = split_dataset(&items, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        let c = split_dataset(&items, &SplitSpec { seed: 2, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn encode_examples() {
        let a = Alphabet::english();
        assert_eq!(encode_transcript("ab", &a).unwrap(), vec![0, 1]);
        assert_eq!(encode_transcript("Ab!", &a).unwrap(), vec![0, 1, a.unk().unwrap()]);
        assert_eq!(a.decode(&encode_transcript("Hi, Bob", &a).unwrap()), "hi<UNK> bob");
        assert!(matches!(encode_transcript("", &a), Err(Error::EmptyLabel)));
    }

    #[test]
    fn utterance_needs_transcript() {
        let clip = AudioClip::new(vec![0.0; 10], 16_000).unwrap();
        assert!(Utterance::new("x", AudioSource::Clip(clip), "  \t").is_err());
    }

    #[test]
    fn batch_sizes_and_padding() {
        let fe = Frontend::new(StftConfig::default()).unwrap();
        let ex = prepare_examples(&utts(5), &fe, &Alphabet::english()).unwrap();
        let batches = make_batches(&ex, 2, 3, 0, Some).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        for b in &batches {
            let t_max = b.features.shape()[1];
            for (i, &len) in b.lengths.iter().enumerate() {
                assert!(len <= t_max);
                assert_eq!(b.item(i), ex[b.indices[i]].features.view());
                assert!(b.features.slice(s![i, len.., ..]).iter().all(|&v| v == 0.0));
                assert_eq!(b.label_lengths[i], b.labels[i].len());
            }
        }
    }

    #[test]
    fn batch_order_depends_on_epoch() {
        let fe = Frontend::new(StftConfig::default()).unwrap();
        let ex = prepare_examples(&utts(12), &fe, &Alphabet::english()).unwrap();
        let order = |epoch| {
            make_batches(&ex, 4, 9, epoch, Some)
                .unwrap()
                .into_iter()
                .flat_map(|b| b.indices)
                .collect::<Vec<_>>()
        };
        assert_eq!(order(0), order(0));
        assert_ne!(order(0), order(1));
    }

    #[test]
    fn infeasible_items_are_skipped() {
        let fe = Frontend::new(StftConfig::default()).unwrap();
        let ex = prepare_examples(&utts(4), &fe, &Alphabet::english()).unwrap();
        // u0 has 4 frames; demanding 5 output frames per label rules it out
        let batches = make_batches(&ex, 8, 0, 0, |t| Some(t / 3)).unwrap();
        let kept: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert!(!kept.contains(&0));
        assert!(kept.contains(&3));
    }

    #[test]
    fn synthetic_duration() {
        let spec = SynthSpec {
            char_ms: 100.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let clip = spec.render("ab", 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(clip.len(), 3200);
        let padded = SynthSpec { pad_ms: 10.0, ..spec };
        let clip = padded.render("ab", 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(clip.len(), 3200 + 2 * 160);
        assert!(clip.samples()[..160].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SynthSpec {
            count: 20,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
        for u in generate_synthetic(&spec).unwrap() {
            let n = u.transcript.chars().count();
            assert!((3..=8).contains(&n), "{:?}", u.transcript);
            assert!(!u.transcript.starts_with(' ') && !u.transcript.ends_with(' '));
            assert!(!u.transcript.contains("  "));
        }
    }

    #[test]
    fn synthetic_char_peaks_at_its_tones() {
        let spec = SynthSpec {
            char_ms: 100.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let cfg = StftConfig::default();
        for &(c, f1, f2) in default_tones().iter().step_by(3) {
            let clip = spec.render(&c.to_string(), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            // direct DFT of the middle frame
            let start = clip.len() / 2 - cfg.frame_len / 2;
            let frame = &clip.samples()[start..start + cfg.frame_len];
            let win = cfg.window.coefficients(cfg.frame_len);
            let mag: Vec<f64> = (0..81)
                .map(|k| {
                    let (mut re, mut im) = (0.0f64, 0.0f64);
                    for (n, (&x, &w)) in frame.iter().zip(&win).enumerate() {
                        let ang = -2.0 * PI * (k * n) as f64 / cfg.frame_len as f64;
                        re += x * w * ang.cos();
                        im += x * w * ang.sin();
                    }
                    re.hypot(im)
                })
                .collect();
            let mut idx: Vec<usize> = (0..81).collect();
            idx.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]));
            let mut top = vec![idx[0], idx[1]];
            top.sort();
            let want = [(f1 / 100.0).round() as usize, (f2 / 100.0).round() as usize];
            assert_eq!(top, want, "char {c:?}");
        }
    }

    #[test]
    fn default_tone_table_is_valid() {
        SynthSpec::default().validate().unwrap();
        let bad = SynthSpec {
            tones: vec![('a', 100.0, 9000.0)],
            charset: "a".into(),
            space_prob: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            count: 3,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let manifest = write_corpus(dir.path(), &corpus).unwrap();
        let back = read_manifest(&manifest).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.id, b.id);
            let (x, y) = (a.load_audio().unwrap(), b.load_audio().unwrap());
            assert_eq!(x.len(), y.len());
            for (p, q) in x.samples().iter().zip(y.samples()) {
                assert!((p - q).abs() <= 1.0 / 32768.0 + 1e-12);
            }
        }
    }

    #[test]
    fn manifest_rejects_missing_tab() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a.wav hello\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Parse(_))));
    }
}
