//! Experiment config file schema (TOML). Unknown keys are rejected at every
//! level; validation runs before any work.

use anyhow::{bail, Context, Result};
use fedser_core::attacks::AttackConfig;
use fedser_core::defences::RandomisationConfig;
use fedser_core::features::MelConfig;
use fedser_core::federation::{DefenceMode, FederationConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Synthetic,
    Wav,
}

/// Corpus source. Synthetic fields apply to `kind = "synthetic"`, the
/// dir/manifest pair to `kind = "wav"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    /// Number of clients (synthetic corpus only; WAV corpora take their
    /// client structure from the manifest).
    #[serde(default)]
    pub clients: Option<usize>,
    pub train_fraction: f64,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub clips_per_client: Option<usize>,
    #[serde(default)]
    pub clip_samples: Option<usize>,
    #[serde(default)]
    pub noise: Option<(f64, f64)>,
    #[serde(default)]
    pub distractor: Option<f64>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// CSV of `relative_wav_path,client_index,label` rows.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("corpus.train_fraction {} outside (0, 1)", self.train_fraction);
        }
        match self.kind {
            CorpusKind::Synthetic => {
                if self.clients.is_none() {
                    bail!("corpus.clients is required for a synthetic corpus");
                }
                if self.dir.is_some() || self.manifest.is_some() {
                    bail!("corpus.dir/manifest only apply to kind = \"wav\"");
                }
            }
            CorpusKind::Wav => {
                if self.dir.is_none() || self.manifest.is_none() {
                    bail!("corpus.dir and corpus.manifest are required for kind = \"wav\"");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub target_frames: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Min-max scale all features to [0, 1] using the training corpus range.
    pub normalise: bool,
}

impl FeaturesConfig {
    pub fn mel(&self) -> MelConfig {
        MelConfig {
            window_len: self.window_len,
            hop: self.hop,
            n_mels: self.n_mels,
            target_frames: self.target_frames,
            fmin: self.fmin,
            fmax: self.fmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Tiny,
    Vgg15,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: Arch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub eval_every: usize,
    pub defence: DefenceMode,
    pub mix_alpha: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub features: FeaturesConfig,
    pub network: NetworkConfig,
    pub federation: FederationSection,
    pub attack: AttackConfig,
    pub randomisation: RandomisationConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// The combined federation settings handed to the round loop.
    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            rounds: self.federation.rounds,
            local_epochs: self.federation.local_epochs,
            train_batch: self.federation.train_batch,
            eval_batch: self.federation.eval_batch,
            eval_every: self.federation.eval_every,
            defence: self.federation.defence,
            attack: self.attack.clone(),
            mix_alpha: self.federation.mix_alpha,
            learning_rate: self.federation.learning_rate,
            master_seed: self.seed,
            randomisation: self.randomisation.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.features.mel().validate()?;
        self.federation_config().validate()?;
        let (bw, bh) = self.randomisation.base_dims();
        if (bw, bh) != (self.features.target_frames, self.features.n_mels) {
            bail!(
                "randomisation base dims ({bw}, {bh}) must equal the feature dims ({}, {})",
                self.features.target_frames,
                self.features.n_mels
            );
        }
        Ok(())
    }

    /// Fully-resolved snapshot, sufficient to reproduce the run.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn apply_overrides(
        &mut self,
        out: Option<PathBuf>,
        seed: Option<u64>,
        clients: Option<usize>,
        rounds: Option<usize>,
    ) -> Result<()> {
        if let Some(out) = out {
            self.output_dir = out;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(clients) = clients {
            if self.corpus.kind != CorpusKind::Synthetic {
                bail!("--clients only applies to a synthetic corpus");
            }
            self.corpus.clients = Some(clients);
        }
        if let Some(rounds) = rounds {
            self.federation.rounds = rounds;
        }
        self.validate()
    }
}
