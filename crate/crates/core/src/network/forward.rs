//! Forward pass with per-layer caching for the backward pass.

use crate::error::{Error, Result};
use crate::network::params::{LayerParams, Parameters, BN_EPS, BN_MOMENTUM};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batchnorm; callers commit running-stat updates.
    Train,
    /// Running statistics; a pure function of (params, input).
    Eval,
}

#[derive(Debug, Clone)]
pub enum LayerAux {
    None,
    /// Flat input index of the winning element, per output element.
    MaxPool { argmax: Vec<usize> },
    /// Statistics used in this pass (batch stats in train mode, running in eval).
    BatchNorm { mean: Vec<f64>, var: Vec<f64> },
}

/// Per-layer stored activations and batchnorm statistics for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input tensor of each layer (layer i consumed `inputs[i]`).
    pub inputs: Vec<Tensor>,
    pub aux: Vec<LayerAux>,
    pub mode: Mode,
}

fn check_params(spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    if spec.layers.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "parameters have {} layers, spec has {}",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    for (idx, (l, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let ok = matches!(
            (l, p),
            (LayerSpec::Conv2d { .. }, LayerParams::Conv { .. })
                | (LayerSpec::Dense { .. }, LayerParams::Dense { .. })
                | (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm { .. })
                | (LayerSpec::Relu, LayerParams::Empty)
                | (LayerSpec::MaxPool { .. }, LayerParams::Empty)
                | (LayerSpec::GlobalAvgPool, LayerParams::Empty)
                | (LayerSpec::Flatten, LayerParams::Empty)
        );
        if !ok {
            return Err(Error::Shape(format!("layer {idx}: parameter kind does not match spec")));
        }
    }
    Ok(())
}

fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Tensor {
    let (b, w, h, cin) = dims4(x);
    let cout = bias.len();
    let (kw, kh) = kernel;
    let ow = (w + 2 * padding.0 - kw) / stride.0 + 1;
    let oh = (h + 2 * padding.1 - kh) / stride.1 + 1;
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0; b * ow * oh * cout];
    let mut acc = vec![0.0; cout];
    for bi in 0..b {
        for oi in 0..ow {
            for oj in 0..oh {
                acc.copy_from_slice(bd);
                for di in 0..kw {
                    let ii = (oi * stride.0 + di) as isize - padding.0 as isize;
                    if ii < 0 || ii >= w as isize {
                        continue;
                    }
                    for dj in 0..kh {
                        let jj = (oj * stride.1 + dj) as isize - padding.1 as isize;
                        if jj < 0 || jj >= h as isize {
                            continue;
                        }
                        let xbase = (((bi * w + ii as usize) * h) + jj as usize) * cin;
                        let wbase = (di * kh + dj) * cin * cout;
                        for ic in 0..cin {
                            let xv = xd[xbase + ic];
                            let wrow = wbase + ic * cout;
                            for oc in 0..cout {
                                acc[oc] += xv * wd[wrow + oc];
                            }
                        }
                    }
                }
                let obase = ((bi * ow + oi) * oh + oj) * cout;
                out[obase..obase + cout].copy_from_slice(&acc);
            }
        }
    }
    Tensor::new(vec![b, ow, oh, cout], out).expect("conv output shape")
}

fn dims4(x: &Tensor) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// Eval mode never mutates anything; in train mode the batchnorm batch
/// statistics land in the cache and are applied to the running statistics
/// by [`commit_running_stats`].
pub fn forward(
    spec: &NetworkSpec,
    params: &Parameters,
    batch: &Tensor,
    mode: Mode,
) -> Result<(Tensor, ForwardCache)> {
    spec.validate()?;
    check_params(spec, params)?;
    let (w, h, c) = spec.input_shape;
    if batch.shape().len() != 4 || batch.shape()[1..] != [w, h, c] {
        return Err(Error::Shape(format!(
            "batch shape {:?} does not match (B, {w}, {h}, {c})",
            batch.shape()
        )));
    }
    batch.check_finite("input batch")?;

    let mut cache = ForwardCache { inputs: Vec::with_capacity(spec.layers.len()), aux: Vec::new(), mode };
    let mut cur = batch.clone();
    for (layer, p) in spec.layers.iter().zip(&params.layers) {
        cache.inputs.push(cur.clone());
        let (next, aux) = match (layer, p) {
            (LayerSpec::Conv2d { kernel, stride, padding, .. }, LayerParams::Conv { weight, bias }) => {
                (conv2d_forward(&cur, weight, bias, *kernel, *stride, *padding), LayerAux::None)
            }
            (LayerSpec::Dense { in_features, out_features }, LayerParams::Dense { weight, bias }) => {
                let b = cur.shape()[0];
                let xd = cur.data();
                let wd = weight.data();
                let bd = bias.data();
                let mut out = vec![0.0; b * out_features];
                for bi in 0..b {
                    let xrow = &xd[bi * in_features..(bi + 1) * in_features];
                    let orow = &mut out[bi * out_features..(bi + 1) * out_features];
                    orow.copy_from_slice(bd);
                    for (i, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[i * out_features..(i + 1) * out_features];
                        for (o, &wv) in wrow.iter().enumerate() {
                            orow[o] += xv * wv;
                        }
                    }
                }
                (Tensor::new(vec![b, *out_features], out)?, LayerAux::None)
            }
            (
                LayerSpec::BatchNorm { channels },
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var },
            ) => {
                let (b, w, h, c) = dims4(&cur);
                debug_assert_eq!(c, *channels);
                let n = (b * w * h) as f64;
                let xd = cur.data();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; c];
                        let mut var = vec![0.0; c];
                        for i in 0..b * w * h {
                            for ch in 0..c {
                                mean[ch] += xd[i * c + ch];
                            }
                        }
                        for m in &mut mean {
                            *m /= n;
                        }
                        for i in 0..b * w * h {
                            for ch in 0..c {
                                let d = xd[i * c + ch] - mean[ch];
                                var[ch] += d * d;
                            }
                        }
                        for v in &mut var {
                            *v /= n;
                        }
                        (mean, var)
                    }
                    Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
                };
                let gd = gamma.data();
                let bd = beta.data();
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut out = vec![0.0; xd.len()];
                for i in 0..b * w * h {
                    for ch in 0..c {
                        out[i * c + ch] = gd[ch] * (xd[i * c + ch] - mean[ch]) * inv_std[ch] + bd[ch];
                    }
                }
                (
                    Tensor::new(cur.shape().to_vec(), out)?,
                    LayerAux::BatchNorm { mean, var },
                )
            }
            (LayerSpec::Relu, _) => {
                let out: Vec<f64> = cur.data().iter().map(|&v| v.max(0.0)).collect();
                (Tensor::new(cur.shape().to_vec(), out)?, LayerAux::None)
            }
            (LayerSpec::MaxPool { kernel }, _) => {
                let (b, w, h, c) = dims4(&cur);
                let (kw, kh) = *kernel;
                let (ow, oh) = (w / kw, h / kh);
                let xd = cur.data();
                let mut out = vec![0.0; b * ow * oh * c];
                let mut argmax = vec![0usize; out.len()];
                for bi in 0..b {
                    for oi in 0..ow {
                        for oj in 0..oh {
                            for ch in 0..c {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for di in 0..kw {
                                    for dj in 0..kh {
                                        let idx =
                                            ((bi * w + oi * kw + di) * h + oj * kh + dj) * c + ch;
                                        if xd[idx] > best {
                                            best = xd[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                let oidx = ((bi * ow + oi) * oh + oj) * c + ch;
                                out[oidx] = best;
                                argmax[oidx] = best_idx;
                            }
                        }
                    }
                }
                (Tensor::new(vec![b, ow, oh, c], out)?, LayerAux::MaxPool { argmax })
            }
            (LayerSpec::GlobalAvgPool, _) => {
                let (b, w, h, c) = dims4(&cur);
                let n = (w * h) as f64;
                let xd = cur.data();
                let mut out = vec![0.0; b * c];
                for bi in 0..b {
                    for i in 0..w * h {
                        for ch in 0..c {
                            out[bi * c + ch] += xd[(bi * w * h + i) * c + ch];
                        }
                    }
                }
                for v in &mut out {
                    *v /= n;
                }
                (Tensor::new(vec![b, c], out)?, LayerAux::None)
            }
            (LayerSpec::Flatten, _) => {
                let (b, w, h, c) = dims4(&cur);
                (cur.clone().reshape(vec![b, w * h * c])?, LayerAux::None)
            }
            _ => unreachable!("check_params verified layer/param alignment"),
        };
        cache.aux.push(aux);
        cur = next;
    }
    Ok((cur, cache))
}

/// Fold the batch statistics recorded in a train-mode cache into the running
/// batchnorm statistics: running = momentum * running + (1 - momentum) * batch.
pub fn commit_running_stats(params: &mut Parameters, cache: &ForwardCache) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(Error::InvalidArgument("commit_running_stats needs a train-mode cache".into()));
    }
    for (p, aux) in params.layers.iter_mut().zip(&cache.aux) {
        if let (LayerParams::BatchNorm { running_mean, running_var, .. }, LayerAux::BatchNorm { mean, var }) =
            (p, aux)
        {
            for (r, m) in running_mean.data_mut().iter_mut().zip(mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in running_var.data_mut().iter_mut().zip(var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }
    Ok(())
}

/// Train-mode forward that also updates the running batchnorm statistics.
pub fn forward_train(
    spec: &NetworkSpec,
    params: &mut Parameters,
    batch: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    let (logits, cache) = forward(spec, params, batch, Mode::Train)?;
    commit_running_stats(params, &cache)?;
    Ok((logits, cache))
}

/// Eval-mode logits without cache bookkeeping for callers that only predict.
pub fn infer(spec: &NetworkSpec, params: &Parameters, batch: &Tensor) -> Result<Tensor> {
    forward(spec, params, batch, Mode::Eval).map(|(logits, _)| logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::build_tiny;

    fn dense_net(weight: Vec<f64>, n: usize) -> (NetworkSpec, Parameters) {
        let spec = NetworkSpec {
            input_shape: (n, 1, 1),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: n, out_features: n },
            ],
            num_classes: n,
        };
        let mut params = Parameters::init(&spec, 0).unwrap();
        if let LayerParams::Dense { weight: w, .. } = &mut params.layers[1] {
            w.data_mut().copy_from_slice(&weight);
        }
        (spec, params)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        // Identity weights, zero bias: logits equal the input.
        let (spec, params) = dense_net(vec![1.0, 0.0, 0.0, 1.0], 2);
        let x = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let logits = infer(&spec, &params, &x).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let spec = NetworkSpec {
            input_shape: (3, 1, 1),
            layers: vec![LayerSpec::Relu, LayerSpec::Flatten],
            num_classes: 3,
        };
        let params = Parameters::init(&spec, 0).unwrap();
        let x = Tensor::new(vec![1, 3, 1, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let logits = infer(&spec, &params, &x).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        // Conv/dense are linear through zero; batchnorm has beta = 0.
        let spec = build_tiny((12, 8, 1), 3).unwrap();
        let params = Parameters::init(&spec, 5).unwrap();
        let x = Tensor::zeros(vec![2, 12, 8, 1]);
        let logits = infer(&spec, &params, &x).unwrap();
        for v in logits.data() {
            assert!(v.abs() < 1e-12, "logit {v} not zero");
        }
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let spec = build_tiny((12, 8, 1), 3).unwrap();
        let params = Parameters::init(&spec, 5).unwrap();
        let x = Tensor::new(vec![1, 12, 8, 1], (0..96).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = infer(&spec, &params, &x).unwrap();
        let b = infer(&spec, &params, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let spec = build_tiny((12, 8, 1), 3).unwrap();
        let params = Parameters::init(&spec, 5).unwrap();
        let x = Tensor::zeros(vec![1, 10, 8, 1]);
        let err = infer(&spec, &params, &x).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn nonfinite_input_rejected() {
        let spec = build_tiny((12, 8, 1), 3).unwrap();
        let params = Parameters::init(&spec, 5).unwrap();
        let mut x = Tensor::zeros(vec![1, 12, 8, 1]);
        x.data_mut()[0] = f64::NAN;
        assert!(infer(&spec, &params, &x).is_err());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let spec = build_tiny((12, 8, 1), 3).unwrap();
        let mut params = Parameters::init(&spec, 5).unwrap();
        let before = params.clone();
        let x = Tensor::new(vec![2, 12, 8, 1], (0..192).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        forward_train(&spec, &mut params, &x).unwrap();
        assert_ne!(params, before);
    }
}
