//! Desk-scale robust federated learning for speech emotion recognition:
//! log-Mel feature extraction, white-box attacks (FGSM, PGD, DeepFool),
//! adversarial training with a mixed loss, an inference-time randomisation
//! defence, federated round orchestration and metric reporting.

pub mod attacks;
pub mod defences;
pub mod error;
pub mod features;
pub mod federation;
pub mod metrics;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
