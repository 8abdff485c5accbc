//! Audio ingestion and the spectrogram frontend.
//!
//! Frames of 160 samples (10 ms at 16 kHz) hopped by 80 samples are Hann
//! windowed, transformed with a real DFT, and compressed with `ln(1 + |X|)`,
//! keeping bins `0..=80`. That gives the 81 frequency bins the network
//! expects. Normalization is per bin, with statistics fitted on a training
//! set.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of frequency bins under the default framing.
pub const NUM_BINS: usize = 81;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Parse(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // periodic Hann
            Window::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 160,
            hop: 80,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 {
            return Err(Error::InvalidConfig("frame_len must be at least 2".into()));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must be in 1..={}, got {}",
                self.frame_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// `floor((len - frame_len) / hop) + 1`, or 0 when the clip is shorter
    /// than one frame.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_len {
            0
        } else {
            (num_samples - self.frame_len) / self.hop + 1
        }
    }
}

/// Time-major log-magnitude spectrogram, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Array2<f64>,
}

impl Spectrogram {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::ShapeMismatch("spectrogram needs at least one frame".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("spectrogram has non-finite entries".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// Reusable STFT state; the FFT plan is built once per frame length.
pub struct Frontend {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("cfg", &self.cfg).finish()
    }
}

impl Frontend {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.frame_len);
        Ok(Self {
            window: cfg.window.coefficients(cfg.frame_len),
            cfg,
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let n = self.cfg.frame_len;
        let frames = self.cfg.frame_count(clip.len());
        if frames == 0 {
            return Err(Error::TooShort {
                needed: n,
                got: clip.len(),
            });
        }
        let bins = self.cfg.num_bins();
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let start = t * self.cfg.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(clip.samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (b, v) in row.iter_mut().enumerate() {
                *v = buf[b].norm().ln_1p();
            }
        }
        Spectrogram::new(out)
    }
}

pub fn compute_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    Frontend::new(*cfg)?.spectrogram(clip)
}

/// Per-bin normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl NormStats {
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: Array1::zeros(bins),
            std: Array1::ones(bins),
        }
    }

    pub fn num_bins(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_normalization_stats<'a, I>(specs: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut sum: Option<Array1<f64>> = None;
    let mut count = 0usize;
    let specs: Vec<&Spectrogram> = specs.into_iter().collect();
    for spec in &specs {
        let s = sum.get_or_insert_with(|| Array1::zeros(spec.num_bins()));
        if s.len() != spec.num_bins() {
            return Err(Error::ShapeMismatch("spectrograms disagree on bin count".into()));
        }
        *s += &spec.frames.sum_axis(Axis(0));
        count += spec.frame_count();
    }
    let Some(sum) = sum else {
        return Err(Error::EmptyDataset("no spectrograms to fit".into()));
    };
    if count < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least 2 frames to fit statistics, got {count}"
        )));
    }
    let mean = sum / count as f64;
    let mut var = Array1::<f64>::zeros(mean.len());
    for spec in &specs {
        for row in spec.frames.axis_iter(Axis(0)) {
            var.zip_mut_with(&(&row - &mean), |v, d| *v += d * d);
        }
    }
    let std = var.mapv(|v| (v / count as f64).sqrt().max(MIN_STD));
    Ok(NormStats { mean, std })
}

pub fn normalize(spec: &Spectrogram, stats: &NormStats) -> Result<Spectrogram> {
    if spec.num_bins() != stats.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, stats have {}",
            spec.num_bins(),
            stats.num_bins()
        )));
    }
    let mut frames = spec.frames.clone();
    for mut row in frames.axis_iter_mut(Axis(0)) {
        row.zip_mut_with(&stats.mean, |v, m| *v -= m);
        row.zip_mut_with(&stats.std, |v, s| *v /= s);
    }
    Ok(Spectrogram { frames })
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a 16-bit PCM mono RIFF/WAVE byte buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Parse("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Parse(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Parse("fmt chunk too small".into()));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (code, channels, rate, bits) =
                    format.ok_or_else(|| Error::Parse("data chunk before fmt chunk".into()))?;
                if code != 1 {
                    return Err(Error::UnsupportedFormat(format!("format code {code}, expected PCM (1)")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("{bits}-bit samples, expected 16-bit")));
                }
                if !size.is_multiple_of(2) {
                    return Err(Error::Parse("odd data chunk length for 16-bit audio".into()));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate)
                    .map_err(|_| Error::Parse("sample rate must be positive".into()));
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(Error::Parse("no data chunk".into()))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_wav(clip)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, n: usize, amp: f64) -> AudioClip {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn one_second_mono_round_trips_through_wav() {
        let clip = AudioClip::new(vec![0.25; 16_000], 16_000).unwrap();
        let parsed = parse_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(parsed.len(), 16_000);
        assert_eq!(parsed.sample_rate_hz(), 16_000);
        assert!(parsed.samples().iter().all(|&s| s == 0.25));
    }

    #[test]
    fn rejects_non_riff() {
        let mut bytes = encode_wav(&AudioClip::new(vec![0.0; 10], 16_000).unwrap());
        bytes[0..4].copy_from_slice(b"RIFX");
        assert!(matches!(parse_wav(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn zero_payload_reads_as_exact_zeros() {
        let bytes = encode_wav(&AudioClip::new(vec![0.0; 321], 8_000).unwrap());
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.len(), 321);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_stereo_and_8_bit() {
        let base = encode_wav(&AudioClip::new(vec![0.0; 8], 16_000).unwrap());
        let mut stereo = base.clone();
        stereo[22..24].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(parse_wav(&stereo), Err(Error::UnsupportedFormat(_))));
        let mut eight = base;
        eight[34..36].copy_from_slice(&8u16.to_le_bytes());
        assert!(matches!(parse_wav(&eight), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let base = encode_wav(&AudioClip::new(vec![0.5, -0.5], 16_000).unwrap());
        let mut bytes = base[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&base[36..]);
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.samples(), &[0.5, -0.5]);
    }

    #[test]
    fn truncated_data_is_parse_error() {
        let bytes = encode_wav(&AudioClip::new(vec![0.1; 100], 16_000).unwrap());
        assert!(matches!(parse_wav(&bytes[..100]), Err(Error::Parse(_))));
    }

    #[test]
    fn one_second_gives_199_frames_of_81_bins() {
        let spec = compute_spectrogram(&sine(440.0, 16_000, 0.5), &StftConfig::default()).unwrap();
        assert_eq!(spec.frame_count(), 199);
        assert_eq!(spec.num_bins(), NUM_BINS);
    }

    #[test]
    fn sine_peaks_at_expected_bin_matching_direct_dft() {
        let clip = sine(1000.0, 1600, 0.8);
        let cfg = StftConfig::default();
        let spec = compute_spectrogram(&clip, &cfg).unwrap();
        // direct O(n^2) DFT of the first windowed frame
        let n = cfg.frame_len;
        let w = Window::Hann.coefficients(n);
        let oracle: Vec<f64> = (0..cfg.num_bins())
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    let x = clip.samples()[i] * w[i];
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (re * re + im * im).sqrt().ln_1p()
            })
            .collect();
        for (b, &o) in oracle.iter().enumerate() {
            assert!((spec.frames()[[0, b]] - o).abs() < 1e-9, "bin {b}");
        }
        let argmax = |row: ndarray::ArrayView1<f64>| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        for row in spec.frames().axis_iter(Axis(0)) {
            assert_eq!(argmax(row), 10);
        }
    }

    #[test]
    fn silence_is_all_zero() {
        let clip = AudioClip::new(vec![0.0; 800], 16_000).unwrap();
        let spec = compute_spectrogram(&clip, &StftConfig::default()).unwrap();
        assert!(spec.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_clip_errors() {
        let clip = AudioClip::new(vec![0.0; 159], 16_000).unwrap();
        assert!(matches!(
            compute_spectrogram(&clip, &StftConfig::default()),
            Err(Error::TooShort { needed: 160, got: 159 })
        ));
    }

    #[test]
    fn identical_frames_clamp_std() {
        let spec = Spectrogram::new(Array2::from_elem((4, 3), 2.5)).unwrap();
        let stats = fit_normalization_stats([&spec]).unwrap();
        assert!(stats.std.iter().all(|&s| s == MIN_STD));
        assert!(stats.mean.iter().all(|&m| m == 2.5));
        // constant bin normalizes to exactly zero
        let out = normalize(&spec, &stats).unwrap();
        assert!(out.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_frame_stats() {
        let spec = Spectrogram::new(ndarray::array![[0.0, 5.0], [2.0, 5.0]]).unwrap();
        let stats = fit_normalization_stats([&spec]).unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.std[0], 1.0);
        let again = fit_normalization_stats([&spec]).unwrap();
        assert_eq!(stats, again);
    }

    #[test]
    fn empty_or_single_frame_stats_error() {
        assert!(matches!(
            fit_normalization_stats(std::iter::empty::<&Spectrogram>()),
            Err(Error::EmptyDataset(_))
        ));
        let one = Spectrogram::new(Array2::zeros((1, 81))).unwrap();
        assert!(matches!(fit_normalization_stats([&one]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn self_normalization_centers_and_scales() {
        let clip = sine(700.0, 4000, 0.3);
        let mut s = clip.samples().to_vec();
        for (i, v) in s.iter_mut().enumerate() {
            *v += 0.1 * ((i * 7919 % 101) as f64 / 101.0 - 0.5);
        }
        let spec = compute_spectrogram(&AudioClip::new(s, 16_000).unwrap(), &StftConfig::default()).unwrap();
        let stats = fit_normalization_stats([&spec]).unwrap();
        let out = normalize(&spec, &stats).unwrap();
        let t = out.frame_count() as f64;
        for col in out.frames().axis_iter(Axis(1)) {
            let m = col.sum() / t;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_stats_leave_input_unchanged() {
        let spec = compute_spectrogram(&sine(300.0, 1000, 0.5), &StftConfig::default()).unwrap();
        let out = normalize(&spec, &NormStats::identity(NUM_BINS)).unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn normalize_rejects_mismatched_bins() {
        let spec = Spectrogram::new(Array2::zeros((3, 81))).unwrap();
        assert!(matches!(
            normalize(&spec, &NormStats::identity(80)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 0usize..5000, frame_len in 2usize..400, hop_frac in 0.01f64..1.0) {
            let hop = ((frame_len as f64 * hop_frac).ceil() as usize).clamp(1, frame_len);
            let cfg = StftConfig { frame_len, hop, window: Window::Hann };
            let expected = if len < frame_len { 0 } else { (len - frame_len) / hop + 1 };
            prop_assert_eq!(cfg.frame_count(len), expected);
            if len >= frame_len {
                let clip = AudioClip::new(vec![0.0; len], 16_000).unwrap();
                let spec = compute_spectrogram(&clip, &cfg).unwrap();
                prop_assert_eq!(spec.frame_count(), expected);
                prop_assert_eq!(spec.num_bins(), frame_len / 2 + 1);
            }
        }

        #[test]
        fn entries_nonnegative_and_monotone_in_amplitude(
            samples in proptest::collection::vec(-0.5f64..0.5, 160..600)
        ) {
            let cfg = StftConfig::default();
            let a = compute_spectrogram(&AudioClip::new(samples.clone(), 16_000).unwrap(), &cfg).unwrap();
            let doubled: Vec<f64> = samples.iter().map(|s| 2.0 * s).collect();
            let b = compute_spectrogram(&AudioClip::new(doubled, 16_000).unwrap(), &cfg).unwrap();
            prop_assert_eq!(a.num_bins(), NUM_BINS);
            for (x, y) in a.frames().iter().zip(b.frames().iter()) {
                prop_assert!(*x >= 0.0);
                prop_assert!(*y >= *x - 1e-12);
            }
        }
    }
}
