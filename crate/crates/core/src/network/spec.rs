//! Declarative network description and shape propagation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: (usize, usize),
    },
    GlobalAvgPool,
    Flatten,
}

/// Activation shape between layers: spatial (W, H, C) or flat feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn elems(&self) -> usize {
        match *self {
            ActShape::Spatial(w, h, c) => w * h * c,
            ActShape::Flat(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (W, H, C) of a single input sample.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Output shape of every layer, in order. Fails with the offending layer
    /// named if any two adjacent layers are incompatible.
    pub fn propagate(&self) -> Result<Vec<ActShape>> {
        let (w, h, c) = self.input_shape;
        if w == 0 || h == 0 || c == 0 {
            return Err(Error::Shape(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        let mut cur = ActShape::Spatial(w, h, c);
        let mut out = Vec::with_capacity(self.layers.len());
        let mut pool_stage = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match (layer, cur) {
                (
                    LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding },
                    ActShape::Spatial(w, h, c),
                ) => {
                    if *in_channels != c {
                        return Err(Error::Shape(format!(
                            "layer {idx} (conv2d): expects {in_channels} input channels, got {c}"
                        )));
                    }
                    if kernel.0 == 0 || kernel.1 == 0 || *out_channels == 0 {
                        return Err(Error::Shape(format!("layer {idx} (conv2d): kernel and channels must be >= 1")));
                    }
                    let we = w + 2 * padding.0;
                    let he = h + 2 * padding.1;
                    if we < kernel.0 || he < kernel.1 {
                        return Err(Error::Shape(format!(
                            "layer {idx} (conv2d): input {w}x{h} too small for kernel {:?} with padding {:?}",
                            kernel, padding
                        )));
                    }
                    ActShape::Spatial((we - kernel.0) / stride.0 + 1, (he - kernel.1) / stride.1 + 1, *out_channels)
                }
                (LayerSpec::BatchNorm { channels }, ActShape::Spatial(w, h, c)) => {
                    if *channels != c {
                        return Err(Error::Shape(format!(
                            "layer {idx} (batchnorm): expects {channels} channels, got {c}"
                        )));
                    }
                    ActShape::Spatial(w, h, c)
                }
                (LayerSpec::Relu, shape) => shape,
                (LayerSpec::MaxPool { kernel }, ActShape::Spatial(w, h, c)) => {
                    pool_stage += 1;
                    if w < kernel.0 || h < kernel.1 {
                        return Err(Error::Shape(format!(
                            "pool stage {pool_stage} (layer {idx}): input {w}x{h} cannot be pooled by {:?}",
                            kernel
                        )));
                    }
                    ActShape::Spatial(w / kernel.0, h / kernel.1, c)
                }
                (LayerSpec::GlobalAvgPool, ActShape::Spatial(_, _, c)) => ActShape::Flat(c),
                (LayerSpec::Flatten, ActShape::Spatial(w, h, c)) => ActShape::Flat(w * h * c),
                (LayerSpec::Dense { in_features, out_features }, ActShape::Flat(f)) => {
                    if *in_features != f {
                        return Err(Error::Shape(format!(
                            "layer {idx} (dense): expects {in_features} input features, got {f}"
                        )));
                    }
                    ActShape::Flat(*out_features)
                }
                (layer, cur) => {
                    return Err(Error::Shape(format!(
                        "layer {idx} ({layer:?}) cannot follow activation shape {cur:?}"
                    )));
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Shape propagation succeeds and the final layer emits `num_classes` logits.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.propagate()?;
        match shapes.last() {
            Some(ActShape::Flat(f)) if *f == self.num_classes => Ok(()),
            Some(last) => Err(Error::Shape(format!(
                "final layer emits {last:?}, expected {} logits",
                self.num_classes
            ))),
            None => Err(Error::Shape("network has no layers".into())),
        }
    }
}

fn conv_bn_relu(layers: &mut Vec<LayerSpec>, in_c: usize, out_c: usize) {
    layers.push(LayerSpec::Conv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: (3, 3),
        stride: (1, 1),
        padding: (1, 1),
    });
    layers.push(LayerSpec::BatchNorm { channels: out_c });
    layers.push(LayerSpec::Relu);
}

/// VGG-15: five conv blocks of 2, 2, 3, 3, 3 convolutions with output
/// channels 64, 128, 256, 512, 512, each conv followed by batchnorm and
/// ReLU and each block ending in a (2, 2) max pool; then global average
/// pooling and two dense layers (13 convs + 2 dense = 15 weighted layers).
pub fn build_vgg15(input_shape: (usize, usize, usize), num_classes: usize) -> Result<NetworkSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
    }
    let block_channels = [64usize, 128, 256, 512, 512];
    let block_convs = [2usize, 2, 3, 3, 3];
    let mut layers = Vec::new();
    let mut in_c = input_shape.2;
    for (&out_c, &convs) in block_channels.iter().zip(&block_convs) {
        for _ in 0..convs {
            conv_bn_relu(&mut layers, in_c, out_c);
            in_c = out_c;
        }
        layers.push(LayerSpec::MaxPool { kernel: (2, 2) });
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { in_features: 512, out_features: 512 });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense { in_features: 512, out_features: num_classes });
    let spec = NetworkSpec { input_shape, layers, num_classes };
    spec.validate()?;
    Ok(spec)
}

/// Desk-scale surrogate: two conv blocks of 8 and 16 channels, global
/// average pooling and one dense layer.
pub fn build_tiny(input_shape: (usize, usize, usize), num_classes: usize) -> Result<NetworkSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
    }
    let mut layers = Vec::new();
    conv_bn_relu(&mut layers, input_shape.2, 8);
    layers.push(LayerSpec::MaxPool { kernel: (2, 2) });
    conv_bn_relu(&mut layers, 8, 16);
    layers.push(LayerSpec::MaxPool { kernel: (2, 2) });
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { in_features: 16, out_features: num_classes });
    let spec = NetworkSpec { input_shape, layers, num_classes };
    spec.validate()?;
    Ok(spec)
}
