//! Both defence stages: adversarial-training data assembly with the mixed
//! loss (training time) and random resize + random pad (inference time).

use crate::error::{Error, Result};
use crate::network::{commit_running_stats, forward, loss_and_gradients, Mode, NetworkSpec, Parameters};
use crate::network::{backward, softmax_cross_entropy};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Random resize + pad settings. Base spectrogram dims are the lower ends of
/// the resize ranges; every draw fits inside the final padded dims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomisationConfig {
    /// Half-open range [lo, hi) the resized width is drawn from.
    pub resize_w: (usize, usize),
    /// Half-open range [lo, hi) the resized height is drawn from.
    pub resize_h: (usize, usize),
    pub final_w: usize,
    pub final_h: usize,
    pub pad_value: f64,
}

impl Default for RandomisationConfig {
    /// Full-scale settings: (373, 64) resized into [373, 380) x [64, 66),
    /// padded to (380, 66) with 0.5.
    fn default() -> Self {
        RandomisationConfig {
            resize_w: (373, 380),
            resize_h: (64, 66),
            final_w: 380,
            final_h: 66,
            pad_value: 0.5,
        }
    }
}

impl RandomisationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize_w.0 >= self.resize_w.1 || self.resize_h.0 >= self.resize_h.1 {
            return Err(Error::InvalidArgument("resize ranges must be non-empty".into()));
        }
        if self.final_w < self.resize_w.1 - 1 || self.final_h < self.resize_h.1 - 1 {
            return Err(Error::InvalidArgument(
                "final dims must accommodate every resize draw".into(),
            ));
        }
        Ok(())
    }

    /// Base spectrogram dims before randomisation.
    pub fn base_dims(&self) -> (usize, usize) {
        (self.resize_w.0, self.resize_h.0)
    }

    pub fn final_dims(&self) -> (usize, usize) {
        (self.final_w, self.final_h)
    }
}

/// Per-round disjoint halves of a client dataset: indices kept as clean
/// training data and indices attacked into adversarial samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSplit {
    pub kept: Vec<usize>,
    pub to_attack: Vec<usize>,
}

/// Uniformly random disjoint halves of 0..n_samples; odd counts give the
/// extra sample to the kept half.
pub fn split_round_data<R: Rng>(n_samples: usize, rng: &mut R) -> Result<RoundSplit> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n_samples} samples into two halves"
        )));
    }
    let mut indices: Vec<usize> = (0..n_samples).collect();
    // Fisher-Yates.
    for i in (1..n_samples).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let keep = n_samples - n_samples / 2;
    let to_attack = indices.split_off(keep);
    Ok(RoundSplit { kept: indices, to_attack })
}

fn branch_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[Tensor],
    labels: &[usize],
    mode: Mode,
) -> Result<(f64, Parameters, Option<crate::network::ForwardCache>)> {
    let batch = Tensor::stack(samples)?;
    match mode {
        Mode::Eval => {
            let (loss, grads) = loss_and_gradients(spec, params, &batch, labels, Mode::Eval)?;
            Ok((loss, grads.params, None))
        }
        Mode::Train => {
            let (logits, cache) = forward(spec, params, &batch, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
            let grads = backward(spec, params, &cache, &dlogits)?;
            Ok((loss, grads.params, Some(cache)))
        }
    }
}

/// Convex mix of the clean-branch and adversarial-branch cross-entropy:
/// loss = alpha * L(kept) + (1 - alpha) * L(adv), with parameter gradients
/// combined the same way. In train mode the running batchnorm statistics are
/// updated from both branch passes.
#[allow(clippy::too_many_arguments)]
pub fn mixed_adversarial_loss(
    spec: &NetworkSpec,
    params: &mut Parameters,
    kept: &[Tensor],
    adv: &[Tensor],
    kept_labels: &[usize],
    adv_labels: &[usize],
    mix_alpha: f64,
    mode: Mode,
) -> Result<(f64, Parameters)> {
    if !(0.0..=1.0).contains(&mix_alpha) {
        return Err(Error::InvalidArgument(format!("mix_alpha {mix_alpha} outside [0, 1]")));
    }
    if kept.is_empty() && mix_alpha > 0.0 {
        return Err(Error::InvalidArgument("kept branch empty but has nonzero weight".into()));
    }
    if adv.is_empty() && mix_alpha < 1.0 {
        return Err(Error::InvalidArgument("adversarial branch empty but has nonzero weight".into()));
    }
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    let mut caches = Vec::new();
    for (samples, labels, weight) in
        [(kept, kept_labels, mix_alpha), (adv, adv_labels, 1.0 - mix_alpha)]
    {
        if weight == 0.0 {
            continue;
        }
        let (branch, branch_grads, cache) = branch_loss(spec, params, samples, labels, mode)?;
        loss += weight * branch;
        let mut flat = grads.flatten();
        for (g, b) in flat.iter_mut().zip(branch_grads.flatten()) {
            *g += weight * b;
        }
        grads = grads.unflatten(&flat)?;
        if let Some(c) = cache {
            caches.push(c);
        }
    }
    for cache in &caches {
        commit_running_stats(params, cache)?;
    }
    Ok((loss, grads))
}

fn dims3(x: &Tensor) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 3 || s[2] != 1 {
        return Err(Error::Shape(format!("expected a (W, H, 1) spectrogram, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// Bilinear resize of a (W, H, 1) tensor to (w2, h2, 1), endpoints aligned,
/// so a same-size resize is the exact identity and outputs stay within the
/// input's value range.
pub fn bilinear_resize(x: &Tensor, w2: usize, h2: usize) -> Result<Tensor> {
    let (w, h) = dims3(x)?;
    let xd = x.data();
    let src_coord = |i: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out == 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = vec![0.0; w2 * h2];
    for i in 0..w2 {
        let sx = src_coord(i, w2, w);
        let x0 = sx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let fx = sx - x0 as f64;
        for j in 0..h2 {
            let sy = src_coord(j, h2, h);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            let v00 = xd[x0 * h + y0];
            let v01 = xd[x0 * h + y1];
            let v10 = xd[x1 * h + y0];
            let v11 = xd[x1 * h + y1];
            out[i * h2 + j] = v00 * (1.0 - fx) * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v10 * fx * (1.0 - fy)
                + v11 * fx * fy;
        }
    }
    Tensor::new(vec![w2, h2, 1], out)
}

/// Randomly enlarge a base-dims spectrogram to (W', H', 1) with W', H' drawn
/// uniformly from the configured half-open ranges.
pub fn random_resize<R: Rng>(x: &Tensor, rng: &mut R, config: &RandomisationConfig) -> Result<Tensor> {
    config.validate()?;
    let (w, h) = dims3(x)?;
    if (w, h) != config.base_dims() {
        return Err(Error::Shape(format!(
            "spectrogram is {w}x{h}, randomisation expects base dims {:?}",
            config.base_dims()
        )));
    }
    let w2 = rng.gen_range(config.resize_w.0..config.resize_w.1);
    let h2 = rng.gen_range(config.resize_h.0..config.resize_h.1);
    bilinear_resize(x, w2, h2)
}

/// Pad to the final dims with the pad value, the interior block placed at a
/// uniformly random offset and preserved exactly.
pub fn random_pad<R: Rng>(x: &Tensor, rng: &mut R, config: &RandomisationConfig) -> Result<Tensor> {
    config.validate()?;
    let (w, h) = dims3(x)?;
    let (fw, fh) = config.final_dims();
    if w > fw || h > fh {
        return Err(Error::Shape(format!("{w}x{h} does not fit the final {fw}x{fh} canvas")));
    }
    let left = rng.gen_range(0..=(fw - w));
    let top = rng.gen_range(0..=(fh - h));
    pad_at(x, left, top, config)
}

fn pad_at(x: &Tensor, left: usize, top: usize, config: &RandomisationConfig) -> Result<Tensor> {
    let (w, h) = dims3(x)?;
    let (fw, fh) = config.final_dims();
    let mut out = vec![config.pad_value; fw * fh];
    let xd = x.data();
    for i in 0..w {
        for j in 0..h {
            out[(left + i) * fh + top + j] = xd[i * h + j];
        }
    }
    Tensor::new(vec![fw, fh, 1], out)
}

/// The inference-time randomisation defence: random resize then random pad.
/// Output shape is always (final_w, final_h, 1) regardless of the draws.
pub fn randomise<R: Rng>(x: &Tensor, rng: &mut R, config: &RandomisationConfig) -> Result<Tensor> {
    let resized = random_resize(x, rng, config)?;
    random_pad(&resized, rng, config)
}

/// Deterministic counterpart used for non-randomised evaluation: no resize,
/// centred padding with the same pad value, so one parameter set serves both
/// the clean and the randomised input contract.
pub fn center_pad(x: &Tensor, config: &RandomisationConfig) -> Result<Tensor> {
    config.validate()?;
    let (w, h) = dims3(x)?;
    let (fw, fh) = config.final_dims();
    if w > fw || h > fh {
        return Err(Error::Shape(format!("{w}x{h} does not fit the final {fw}x{fh} canvas")));
    }
    pad_at(x, (fw - w) / 2, (fh - h) / 2, config)
}
