//! 16 kHz mono audio to log-Mel spectrograms of shape (frames, mels, 1).

mod synth;
mod wav;

pub use synth::{generate_corpus, synth_clip, SynthConfig};
pub use wav::read_wav;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("clip has no samples".into()));
        }
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Audio(format!("sample rate {sample_rate} Hz, expected {SAMPLE_RATE}")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Short-time analysis settings.
///
/// Defaults follow the full-scale pipeline: 512-sample Hann window,
/// 256-sample hop, 64 Mel bins, 373 frames (95744 samples per clip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub target_frames: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { window_len: 512, hop: 256, n_mels: 64, target_frames: 373, fmin: 0.0, fmax: 8000.0 }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidArgument(format!(
                "hop {} must be in 1..={}",
                self.hop, self.window_len
            )));
        }
        if self.n_mels == 0 || self.target_frames == 0 {
            return Err(Error::InvalidArgument("n_mels and target_frames must be >= 1".into()));
        }
        if !(self.fmin < self.fmax && self.fmax <= SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "need fmin < fmax <= {}: got {}..{}",
                SAMPLE_RATE / 2,
                self.fmin,
                self.fmax
            )));
        }
        Ok(())
    }

    /// Clip length that yields exactly `target_frames` frames.
    pub fn target_samples(&self) -> usize {
        self.window_len + self.hop * (self.target_frames - 1)
    }
}

/// Number of analysis frames for a clip of `n` samples (no centre padding).
pub fn frame_count(n: usize, window_len: usize, hop: usize) -> usize {
    (n - window_len) / hop + 1
}

/// Force a clip to exactly `target_samples` samples: shorter clips are
/// self-repeated end-to-end then truncated, longer clips are truncated.
pub fn unify_length(clip: &AudioClip, target_samples: usize) -> Result<AudioClip> {
    if target_samples == 0 {
        return Err(Error::InvalidArgument("target_samples must be >= 1".into()));
    }
    let src = clip.samples();
    let mut out = Vec::with_capacity(target_samples);
    while out.len() < target_samples {
        let take = (target_samples - out.len()).min(src.len());
        out.extend_from_slice(&src[..take]);
    }
    AudioClip::new(out, clip.sample_rate())
}

fn hann(window_len: usize) -> Vec<f64> {
    // Periodic Hann.
    (0..window_len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes, shape (frames, window_len / 2 + 1).
pub fn stft_magnitude(clip: &AudioClip, window_len: usize, hop: usize) -> Result<Tensor> {
    if clip.len() < window_len {
        return Err(Error::Audio(format!(
            "clip of {} samples is shorter than the {window_len}-sample window",
            clip.len()
        )));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be >= 1".into()));
    }
    let frames = frame_count(clip.len(), window_len, hop);
    let n_bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let samples = clip.samples();
    let mut out = vec![0.0; frames * n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for f in 0..frames {
        let start = f * hop;
        for (i, w) in window.iter().enumerate() {
            buf[i] = Complex::new(samples[start + i] * w, 0.0);
        }
        fft.process(&mut buf);
        for (bin, v) in buf.iter().take(n_bins).enumerate() {
            out[f * n_bins + bin] = v.norm();
        }
    }
    Tensor::new(vec![frames, n_bins], out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Mel scale in Mel units for a frequency in Hz.
pub fn mel(f: f64) -> f64 {
    hz_to_mel(f)
}

/// Triangular Mel filterbank, shape (n_mels, n_fft_bins). Filter centres are
/// uniform on the Mel scale; each row is normalised to peak at 1.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft_bins: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Tensor> {
    if !(fmin < fmax && fmax <= sample_rate as f64 / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "need fmin < fmax <= {}: got {fmin}..{fmax}",
            sample_rate as f64 / 2.0
        )));
    }
    if n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be >= 1".into()));
    }
    let window_len = (n_fft_bins - 1) * 2;
    let bin_hz = |bin: usize| bin as f64 * sample_rate as f64 / window_len as f64;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edge = |i: usize| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64);
    let mut out = vec![0.0; n_mels * n_fft_bins];
    for m in 0..n_mels {
        let (left, center, right) = (edge(m), edge(m + 1), edge(m + 2));
        let mut row_max = 0.0f64;
        for bin in 0..n_fft_bins {
            let f = bin_hz(bin);
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            out[m * n_fft_bins + bin] = w;
            row_max = row_max.max(w);
        }
        if row_max <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mel filter {m} collapses to zero width: {n_mels} mels exceed the FFT resolution"
            )));
        }
        for bin in 0..n_fft_bins {
            out[m * n_fft_bins + bin] /= row_max;
        }
    }
    Tensor::new(vec![n_mels, n_fft_bins], out)
}

/// Log floor added to the Mel power before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Log-Mel spectrogram of a length-unified clip, shape
/// (target_frames, n_mels, 1): ln(mel_power + floor).
pub fn log_mel(clip: &AudioClip, config: &MelConfig) -> Result<Tensor> {
    config.validate()?;
    let target = config.target_samples();
    if clip.len() != target {
        return Err(Error::Audio(format!(
            "clip has {} samples; unify to {target} before extraction",
            clip.len()
        )));
    }
    let mag = stft_magnitude(clip, config.window_len, config.hop)?;
    let frames = mag.shape()[0];
    let n_bins = mag.shape()[1];
    debug_assert_eq!(frames, config.target_frames);
    let fb = mel_filterbank(config.n_mels, n_bins, clip.sample_rate(), config.fmin, config.fmax)?;
    let fbd = fb.data();
    let md = mag.data();
    let mut out = vec![0.0; frames * config.n_mels];
    for f in 0..frames {
        let row = &md[f * n_bins..(f + 1) * n_bins];
        for m in 0..config.n_mels {
            let frow = &fbd[m * n_bins..(m + 1) * n_bins];
            let mut power = 0.0;
            for (w, v) in frow.iter().zip(row) {
                power += w * v * v;
            }
            out[f * config.n_mels + m] = (power + LOG_FLOOR).ln();
        }
    }
    let t = Tensor::new(vec![frames, config.n_mels, 1], out)?;
    t.check_finite("log-Mel spectrogram")?;
    Ok(t)
}
