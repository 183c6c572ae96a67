//! Minimal differentiable feed-forward network: dense, 2-D convolution,
//! batch normalisation, ReLU, max pooling, global average pooling and
//! softmax cross-entropy, with gradients for both parameters and inputs.

mod backward;
mod checkpoint;
mod forward;
mod params;
mod spec;

pub use backward::{backward, loss_and_gradients, predict, softmax, softmax_cross_entropy, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint, spec_hash};
pub use forward::{commit_running_stats, forward, forward_train, infer, ForwardCache, LayerAux, Mode};
pub use params::{
    adam_step, adam_step_flat, AdamState, LayerParams, Parameters, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
    BN_EPS, BN_MOMENTUM,
};
pub use spec::{build_tiny, build_vgg15, ActShape, LayerSpec, NetworkSpec};
