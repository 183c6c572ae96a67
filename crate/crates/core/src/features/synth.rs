//! Procedural labelled corpus for desk-scale runs.
//!
//! Each class has a pair of signature tones; clips add per-clip detune,
//! random phase and amplitude, broadband noise and a distractor tone so the
//! task is learnable but not separable by a single cell.

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub clips_per_speaker: usize,
    pub clip_samples: usize,
    /// Broadband noise amplitude range.
    pub noise: (f64, f64),
    /// Maximum amplitude of the random distractor tone.
    pub distractor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            clips_per_speaker: 40,
            clip_samples: 12_032,
            noise: (0.05, 0.15),
            distractor: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument("synthetic corpus needs >= 2 classes".into()));
        }
        if self.clips_per_speaker == 0 || self.clip_samples == 0 {
            return Err(Error::InvalidArgument("clips_per_speaker and clip_samples must be >= 1".into()));
        }
        Ok(())
    }
}

fn tone(samples: &mut [f64], freq: f64, amp: f64, phase: f64) {
    let w = 2.0 * std::f64::consts::PI * freq / SAMPLE_RATE as f64;
    for (n, s) in samples.iter_mut().enumerate() {
        *s += amp * (w * n as f64 + phase).sin();
    }
}

/// Signature tone frequencies for a class.
fn class_freqs(class: usize) -> (f64, f64) {
    let f1 = 500.0 + 300.0 * class as f64;
    (f1, f1 * 1.4)
}

/// One labelled clip. Deterministic given the rng state.
pub fn synth_clip(class: usize, config: &SynthConfig, rng: &mut ChaCha20Rng) -> Result<AudioClip> {
    config.validate()?;
    if class >= config.classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} classes",
            config.classes
        )));
    }
    let mut samples = vec![0.0; config.clip_samples];
    let (f1, f2) = class_freqs(class);
    let detune = 1.0 + rng.gen_range(-0.03..0.03);
    let amp = rng.gen_range(0.25..0.6);
    tone(&mut samples, f1 * detune, amp, rng.gen_range(0.0..std::f64::consts::TAU));
    tone(&mut samples, f2 * detune, amp * 0.6, rng.gen_range(0.0..std::f64::consts::TAU));
    if config.distractor > 0.0 {
        let df = rng.gen_range(300.0..6000.0);
        let da = rng.gen_range(0.0..config.distractor);
        tone(&mut samples, df, da, rng.gen_range(0.0..std::f64::consts::TAU));
    }
    let noise_amp = rng.gen_range(config.noise.0..config.noise.1.max(config.noise.0 + 1e-9));
    for s in &mut samples {
        *s += rng.gen_range(-noise_amp..noise_amp);
    }
    // Keep samples inside [-1, 1].
    let peak = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 1.0 {
        for s in &mut samples {
            *s /= peak;
        }
    }
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Per-speaker labelled clips, classes cycled so every speaker covers all of
/// them. Deterministic given the seed.
pub fn generate_corpus(
    config: &SynthConfig,
    n_speakers: usize,
    seed: u64,
) -> Result<Vec<Vec<(AudioClip, usize)>>> {
    config.validate()?;
    if n_speakers == 0 {
        return Err(Error::InvalidArgument("corpus needs >= 1 speaker".into()));
    }
    let mut corpus = Vec::with_capacity(n_speakers);
    for speaker in 0..n_speakers {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(speaker as u64 + 1)));
        let mut clips = Vec::with_capacity(config.clips_per_speaker);
        for i in 0..config.clips_per_speaker {
            let class = i % config.classes;
            clips.push((synth_clip(class, config, &mut rng)?, class));
        }
        corpus.push(clips);
    }
    Ok(corpus)
}
