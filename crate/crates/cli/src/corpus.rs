//! Corpus assembly: synthetic or WAV audio, speaker-dependent train/test
//! split, parallel log-Mel extraction, optional [0, 1] min-max scaling
//! anchored on the training corpus.

use crate::config::{CorpusKind, ExperimentConfig};
use anyhow::{bail, Context, Result};
use fedser_core::features::{generate_corpus, log_mel, read_wav, unify_length, AudioClip, SynthConfig};
use fedser_core::federation::speaker_dependent_split;
use fedser_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

const SPLIT_SALT: u64 = 0x5eed_5eed_0000_0001;

#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Per-client training features in base dims (target_frames, n_mels, 1).
    pub clients: Vec<Vec<(Tensor, usize)>>,
    /// Pooled test features.
    pub test: Vec<(Tensor, usize)>,
    pub num_classes: usize,
    /// Training-corpus (min, max) used for scaling, when enabled.
    pub feature_range: Option<(f64, f64)>,
}

fn synthetic_corpus(config: &ExperimentConfig) -> Result<Vec<Vec<(AudioClip, usize)>>> {
    let c = &config.corpus;
    let synth = SynthConfig {
        classes: c.classes.unwrap_or(4),
        clips_per_speaker: c.clips_per_client.unwrap_or(40),
        clip_samples: c.clip_samples.unwrap_or_else(|| config.features.mel().target_samples()),
        noise: c.noise.unwrap_or((0.05, 0.15)),
        distractor: c.distractor.unwrap_or(0.25),
    };
    let clients = c.clients.expect("validated");
    Ok(generate_corpus(&synth, clients, config.seed)?)
}

fn wav_corpus(config: &ExperimentConfig) -> Result<Vec<Vec<(AudioClip, usize)>>> {
    let c = &config.corpus;
    let dir = c.dir.as_ref().expect("validated");
    let manifest = c.manifest.as_ref().expect("validated");
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading manifest {}", manifest.display()))?;
    let mut per_client: Vec<Vec<(AudioClip, usize)>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            bail!("{}:{}: expected `wav_path,client,label`", manifest.display(), lineno + 1);
        }
        let client: usize = parts[1]
            .parse()
            .with_context(|| format!("{}:{}: bad client index", manifest.display(), lineno + 1))?;
        let label: usize = parts[2]
            .parse()
            .with_context(|| format!("{}:{}: bad label", manifest.display(), lineno + 1))?;
        let clip = read_wav(&dir.join(parts[0]))?;
        if per_client.len() <= client {
            per_client.resize_with(client + 1, Vec::new);
        }
        per_client[client].push((clip, label));
    }
    if per_client.iter().any(Vec::is_empty) {
        bail!("manifest leaves at least one client index with no clips");
    }
    Ok(per_client)
}

/// Build the labelled feature sets the federation consumes.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    let audio = match config.corpus.kind {
        CorpusKind::Synthetic => synthetic_corpus(config)?,
        CorpusKind::Wav => wav_corpus(config)?,
    };
    let num_classes = audio
        .iter()
        .flatten()
        .map(|(_, label)| label + 1)
        .max()
        .context("corpus is empty")?;
    if num_classes < 2 {
        bail!("corpus has a single class; need >= 2");
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ SPLIT_SALT);
    let (train_audio, test_audio) =
        speaker_dependent_split(&audio, config.corpus.train_fraction, &mut rng)?;

    let mel = config.features.mel();
    let extract = |set: &[(AudioClip, usize)]| -> Result<Vec<(Tensor, usize)>> {
        set.par_iter()
            .map(|(clip, label)| {
                let unified = unify_length(clip, mel.target_samples())?;
                Ok((log_mel(&unified, &mel)?, *label))
            })
            .collect()
    };
    let mut clients: Vec<Vec<(Tensor, usize)>> =
        train_audio.iter().map(|set| extract(set)).collect::<Result<_>>()?;
    let mut test = extract(&test_audio)?;

    let feature_range = if config.features.normalise {
        let range = train_range(&clients)?;
        for set in clients.iter_mut().chain(std::iter::once(&mut test)) {
            for (x, _) in set.iter_mut() {
                scale_to_unit(x, range);
            }
        }
        Some(range)
    } else {
        None
    };
    Ok(PreparedData { clients, test, num_classes, feature_range })
}

fn train_range(clients: &[Vec<(Tensor, usize)>]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, _) in clients.iter().flatten() {
        for v in x.data() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(lo < hi) {
        bail!("training features are constant ({lo}); cannot min-max scale");
    }
    Ok((lo, hi))
}

fn scale_to_unit(x: &mut Tensor, (lo, hi): (f64, f64)) {
    for v in x.data_mut() {
        *v = (*v - lo) / (hi - lo);
    }
}
