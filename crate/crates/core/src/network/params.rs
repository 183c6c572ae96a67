//! Weight storage, seeded initialisation, flattening and the Adam update.

use crate::error::{Error, Result};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Batchnorm epsilon inside the variance square root.
pub const BN_EPS: f64 = 1e-5;
/// Momentum for the running batchnorm statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Conv {
        /// (kw, kh, in_channels, out_channels)
        weight: Tensor,
        bias: Tensor,
    },
    Dense {
        /// (in_features, out_features)
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    Empty,
}

impl LayerParams {
    /// Tensors in flattening order. Running batchnorm statistics are part of
    /// the layout so that aggregation and checkpoints cover them.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                vec![gamma, beta, running_mean, running_var]
            }
            LayerParams::Empty => vec![],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                vec![gamma, beta, running_mean, running_var]
            }
            LayerParams::Empty => vec![],
        }
    }
}

/// Per-layer weight tensors with a deterministic flattening order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

impl Parameters {
    /// He-normal initialisation for conv/dense weights, zero biases,
    /// batchnorm gamma = 1 and beta = 0. Deterministic given the seed.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match layer {
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = (kernel.0 * kernel.1 * in_channels) as f64;
                    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
                    let n = kernel.0 * kernel.1 * in_channels * out_channels;
                    let weight = Tensor::new(
                        vec![kernel.0, kernel.1, *in_channels, *out_channels],
                        (0..n).map(|_| dist.sample(&mut rng)).collect(),
                    )?;
                    LayerParams::Conv { weight, bias: Tensor::zeros(vec![*out_channels]) }
                }
                LayerSpec::Dense { in_features, out_features } => {
                    let dist = Normal::new(0.0, (2.0 / *in_features as f64).sqrt()).unwrap();
                    let n = in_features * out_features;
                    let weight = Tensor::new(
                        vec![*in_features, *out_features],
                        (0..n).map(|_| dist.sample(&mut rng)).collect(),
                    )?;
                    LayerParams::Dense { weight, bias: Tensor::zeros(vec![*out_features]) }
                }
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm {
                    gamma: Tensor::filled(vec![*channels], 1.0),
                    beta: Tensor::zeros(vec![*channels]),
                    running_mean: Tensor::zeros(vec![*channels]),
                    running_var: Tensor::filled(vec![*channels], 1.0),
                },
                LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Flatten => {
                    LayerParams::Empty
                }
            });
        }
        Ok(Parameters { layers })
    }

    /// A structurally identical parameter set with every tensor zeroed.
    /// Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Parameters {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { weight, bias } => LayerParams::Conv {
                    weight: Tensor::zeros(weight.shape().to_vec()),
                    bias: Tensor::zeros(bias.shape().to_vec()),
                },
                LayerParams::Dense { weight, bias } => LayerParams::Dense {
                    weight: Tensor::zeros(weight.shape().to_vec()),
                    bias: Tensor::zeros(bias.shape().to_vec()),
                },
                LayerParams::BatchNorm { gamma, .. } => {
                    let shape = gamma.shape().to_vec();
                    LayerParams::BatchNorm {
                        gamma: Tensor::zeros(shape.clone()),
                        beta: Tensor::zeros(shape.clone()),
                        running_mean: Tensor::zeros(shape.clone()),
                        running_var: Tensor::zeros(shape),
                    }
                }
                LayerParams::Empty => LayerParams::Empty,
            })
            .collect();
        Parameters { layers }
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(|t| t.len()).sum()
    }

    /// Trainable scalar count (conv/dense weights and biases, batchnorm
    /// gamma and beta; running statistics excluded).
    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                    weight.len() + bias.len()
                }
                LayerParams::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParams::Empty => 0,
            })
            .sum()
    }

    /// Concatenate every tensor (layer order, deterministic layout).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for layer in &self.layers {
            for t in layer.tensors() {
                out.extend_from_slice(t.data());
            }
        }
        out
    }

    /// Inverse of [`flatten`] against `self`'s layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Parameters> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "flat vector has {} scalars, layout expects {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for layer in &mut out.layers {
            for t in layer.tensors_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(out)
    }

    pub fn same_layout(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                let ta = a.tensors();
                let tb = b.tensors();
                ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.shape() == y.shape())
            })
    }
}

/// Adam first/second moment estimates over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One Adam update over flattened parameters. Refuses non-finite gradients.
pub fn adam_step_flat(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam: gradient contains NaN or infinity, step refused".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grads[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// [`adam_step_flat`] lifted to structured [`Parameters`].
pub fn adam_step(params: &mut Parameters, grads: &Parameters, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::Shape("adam: gradient layout does not match parameters".into()));
    }
    let mut flat = params.flatten();
    let gflat = grads.flatten();
    adam_step_flat(&mut flat, &gflat, state, lr)?;
    *params = params.unflatten(&flat)?;
    Ok(())
}
