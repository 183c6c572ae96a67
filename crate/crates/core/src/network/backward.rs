//! Backward pass: parameter gradients and input gradients.

use crate::error::{Error, Result};
use crate::network::forward::{forward, ForwardCache, LayerAux, Mode};
use crate::network::params::{LayerParams, Parameters, BN_EPS};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

/// Parameter gradients in the [`Parameters`] layout (running-stat slots stay
/// zero) plus the gradient with respect to the input batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Parameters,
    pub input: Tensor,
}

fn dims4(x: &Tensor) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// Propagate `dout` (gradient at the logits) back through the network,
/// using the activations recorded in `cache`.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    cache: &ForwardCache,
    dout: &Tensor,
) -> Result<Gradients> {
    if cache.inputs.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "cache has {} layers, spec has {}",
            cache.inputs.len(),
            spec.layers.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut d = dout.clone();
    for idx in (0..spec.layers.len()).rev() {
        let x = &cache.inputs[idx];
        d = match (&spec.layers[idx], &params.layers[idx], &mut grads.layers[idx], &cache.aux[idx]) {
            (
                LayerSpec::Conv2d { kernel, stride, padding, .. },
                LayerParams::Conv { weight, .. },
                LayerParams::Conv { weight: gw, bias: gb },
                _,
            ) => {
                let (b, w, h, cin) = dims4(x);
                let (kw, kh) = *kernel;
                let (_, ow, oh, cout) = dims4(&d);
                let xd = x.data();
                let wd = weight.data();
                let dd = d.data();
                let gwd = gw.data_mut();
                let gbd = gb.data_mut();
                let mut dx = vec![0.0; xd.len()];
                for bi in 0..b {
                    for oi in 0..ow {
                        for oj in 0..oh {
                            let obase = ((bi * ow + oi) * oh + oj) * cout;
                            let drow = &dd[obase..obase + cout];
                            for (oc, &dv) in drow.iter().enumerate() {
                                gbd[oc] += dv;
                            }
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
                                    let xbase = ((bi * w + ii as usize) * h + jj as usize) * cin;
                                    let wbase = (di * kh + dj) * cin * cout;
                                    for ic in 0..cin {
                                        let xv = xd[xbase + ic];
                                        let wrow = wbase + ic * cout;
                                        let mut acc = 0.0;
                                        for (oc, &dv) in drow.iter().enumerate() {
                                            gwd[wrow + oc] += xv * dv;
                                            acc += wd[wrow + oc] * dv;
                                        }
                                        dx[xbase + ic] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (
                LayerSpec::Dense { in_features, out_features },
                LayerParams::Dense { weight, .. },
                LayerParams::Dense { weight: gw, bias: gb },
                _,
            ) => {
                let b = x.shape()[0];
                let xd = x.data();
                let wd = weight.data();
                let dd = d.data();
                let gwd = gw.data_mut();
                let gbd = gb.data_mut();
                let mut dx = vec![0.0; xd.len()];
                for bi in 0..b {
                    let xrow = &xd[bi * in_features..(bi + 1) * in_features];
                    let drow = &dd[bi * out_features..(bi + 1) * out_features];
                    for (o, &dv) in drow.iter().enumerate() {
                        gbd[o] += dv;
                    }
                    for (i, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[i * out_features..(i + 1) * out_features];
                        let gwrow = &mut gwd[i * out_features..(i + 1) * out_features];
                        let mut acc = 0.0;
                        for (o, &dv) in drow.iter().enumerate() {
                            gwrow[o] += xv * dv;
                            acc += wrow[o] * dv;
                        }
                        dx[bi * in_features + i] = acc;
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (
                LayerSpec::BatchNorm { .. },
                LayerParams::BatchNorm { gamma, .. },
                LayerParams::BatchNorm { gamma: gg, beta: gb, .. },
                LayerAux::BatchNorm { mean, var },
            ) => {
                let (b, w, h, c) = dims4(x);
                let n = (b * w * h) as f64;
                let xd = x.data();
                let dd = d.data();
                let gd = gamma.data();
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let ggd = gg.data_mut();
                let gbd = gb.data_mut();
                // Accumulate per-channel sums of dxhat and dxhat * xhat.
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for i in 0..b * w * h {
                    for ch in 0..c {
                        let xhat = (xd[i * c + ch] - mean[ch]) * inv_std[ch];
                        let dy = dd[i * c + ch];
                        ggd[ch] += dy * xhat;
                        gbd[ch] += dy;
                        let dxhat = dy * gd[ch];
                        sum_dxhat[ch] += dxhat;
                        sum_dxhat_xhat[ch] += dxhat * xhat;
                    }
                }
                let mut dx = vec![0.0; xd.len()];
                match cache.mode {
                    Mode::Train => {
                        for i in 0..b * w * h {
                            for ch in 0..c {
                                let xhat = (xd[i * c + ch] - mean[ch]) * inv_std[ch];
                                let dxhat = dd[i * c + ch] * gd[ch];
                                dx[i * c + ch] = inv_std[ch]
                                    * (dxhat - sum_dxhat[ch] / n - xhat * sum_dxhat_xhat[ch] / n);
                            }
                        }
                    }
                    Mode::Eval => {
                        // Running stats are constants: dx = dy * gamma / std.
                        for i in 0..b * w * h {
                            for ch in 0..c {
                                dx[i * c + ch] = dd[i * c + ch] * gd[ch] * inv_std[ch];
                            }
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (LayerSpec::Relu, _, _, _) => {
                let xd = x.data();
                let out: Vec<f64> = d
                    .data()
                    .iter()
                    .zip(xd)
                    .map(|(&dv, &xv)| if xv > 0.0 { dv } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), out)?
            }
            (LayerSpec::MaxPool { .. }, _, _, LayerAux::MaxPool { argmax }) => {
                let mut dx = vec![0.0; x.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += d.data()[o];
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (LayerSpec::GlobalAvgPool, _, _, _) => {
                let (b, w, h, c) = dims4(x);
                let n = (w * h) as f64;
                let dd = d.data();
                let mut dx = vec![0.0; x.len()];
                for bi in 0..b {
                    for i in 0..w * h {
                        for ch in 0..c {
                            dx[(bi * w * h + i) * c + ch] = dd[bi * c + ch] / n;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (LayerSpec::Flatten, _, _, _) => d.clone().reshape(x.shape().to_vec())?,
            _ => {
                return Err(Error::Shape(format!("layer {idx}: cache/param mismatch in backward")));
            }
        };
    }
    d.check_finite("input gradient")?;
    Ok(Gradients { params: grads, input: d })
}

/// Softmax probabilities per row of a (B, K) logits tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    let ld = logits.data();
    let mut out = vec![0.0; ld.len()];
    for bi in 0..b {
        let row = &ld[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[bi * k + i] = e;
            sum += e;
        }
        for i in 0..k {
            out[bi * k + i] /= sum;
        }
    }
    Tensor::new(vec![b, k], out).expect("softmax shape")
}

/// Mean softmax cross-entropy and its gradient at the logits,
/// d = (softmax - onehot) / B.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, num_classes: k });
        }
    }
    let probs = softmax(logits);
    let pd = probs.data();
    let mut loss = 0.0;
    let mut dlogits = pd.to_vec();
    for (bi, &y) in labels.iter().enumerate() {
        loss -= pd[bi * k + y].max(1e-300).ln();
        dlogits[bi * k + y] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    for d in &mut dlogits {
        *d *= scale;
    }
    Ok((loss * scale, Tensor::new(vec![b, k], dlogits)?))
}

/// Mean cross-entropy loss of the batch plus parameter and input gradients
/// evaluated at the given point.
pub fn loss_and_gradients(
    spec: &NetworkSpec,
    params: &Parameters,
    batch: &Tensor,
    labels: &[usize],
    mode: Mode,
) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward(spec, params, batch, mode)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let grads = backward(spec, params, &cache, &dlogits)?;
    Ok((loss, grads))
}

/// Argmax prediction per batch row, ties broken toward the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    let ld = logits.data();
    (0..b)
        .map(|bi| {
            let row = &ld[bi * k..(bi + 1) * k];
            let mut best = 0;
            for i in 1..k {
                if row[i] > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
