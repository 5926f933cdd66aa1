//! Builders for the four roles: encoder, utility/privacy discriminators
//! (shared MLP builder), and reconstructors including the encoder mirror.

use std::fmt;
use std::str::FromStr;

use super::{Layer, Model};
use crate::error::{PanError, Result};

/// Encoder stacks emit spatial features; they never contain dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderPreset {
    /// Two conv(5x5, pad 2) + batchnorm + relu + maxpool(2) blocks, 8 then 16 channels.
    Lenet,
    /// The same two blocks with 4 then 8 channels.
    Compact,
    /// No layers: features are the raw input.
    Identity,
    Custom(Vec<Layer>),
}

impl EncoderPreset {
    pub fn layers(&self) -> Vec<Layer> {
        match self {
            EncoderPreset::Lenet => {
                let block = |c| {
                    [
                        Layer::Conv {
                            out_channels: c,
                            kernel: 5,
                            stride: 1,
                            pad: 2,
                        },
                        Layer::BatchNorm,
                        Layer::Relu,
                        Layer::MaxPool {
                            window: 2,
                            stride: 2,
                        },
                    ]
                };
                block(8).into_iter().chain(block(16)).collect()
            }
            EncoderPreset::Compact => {
                let mut layers = EncoderPreset::Lenet.layers();
                for l in &mut layers {
                    if let Layer::Conv { out_channels, .. } = l {
                        *out_channels /= 2;
                    }
                }
                layers
            }
            EncoderPreset::Identity => vec![],
            EncoderPreset::Custom(layers) => layers.clone(),
        }
    }
}

impl fmt::Display for EncoderPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderPreset::Lenet => f.write_str("lenet"),
            EncoderPreset::Compact => f.write_str("compact"),
            EncoderPreset::Identity => f.write_str("identity"),
            EncoderPreset::Custom(layers) => {
                f.write_str("custom:")?;
                let parts: Vec<String> = layers.iter().map(Layer::to_string).collect();
                f.write_str(&parts.join(" "))
            }
        }
    }
}

impl FromStr for EncoderPreset {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lenet" => Ok(EncoderPreset::Lenet),
            "compact" => Ok(EncoderPreset::Compact),
            "identity" => Ok(EncoderPreset::Identity),
            other => match other.strip_prefix("custom:") {
                Some(spec) => Ok(EncoderPreset::Custom(
                    spec.split_whitespace()
                        .map(str::parse)
                        .collect::<Result<Vec<Layer>>>()?,
                )),
                None => Err(PanError::Config(format!(
                    "unknown encoder preset `{other}`"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructorPreset {
    /// unpool + 3x3 transposed conv per stage, channels halving.
    Generic,
    /// unpool + 5x5 transposed conv per stage, channels kept.
    Wide,
}

impl fmt::Display for ReconstructorPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconstructorPreset::Generic => "generic",
            ReconstructorPreset::Wide => "wide",
        })
    }
}

impl FromStr for ReconstructorPreset {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "generic" => Ok(ReconstructorPreset::Generic),
            "wide" => Ok(ReconstructorPreset::Wide),
            other => Err(PanError::Config(format!(
                "unknown reconstructor preset `{other}`"
            ))),
        }
    }
}

/// Builds an encoder for per-sample `input_shape = [C, H, W]`.
pub fn build_encoder(input_shape: &[usize], preset: &EncoderPreset, seed: u64) -> Result<Model> {
    let &[_, h, w] = input_shape else {
        return Err(PanError::Build {
            layer: 0,
            reason: format!("encoder input must be [C,H,W], got {input_shape:?}"),
        });
    };
    if !matches!(preset, EncoderPreset::Identity) && (h < 8 || w < 8) {
        return Err(PanError::Build {
            layer: 0,
            reason: format!("encoder input {h}x{w} smaller than 8x8"),
        });
    }
    let layers = preset.layers();
    if let Some(i) = layers
        .iter()
        .position(|l| matches!(l, Layer::Dense { .. } | Layer::Softmax | Layer::Flatten))
    {
        return Err(PanError::Build {
            layer: i,
            reason: "encoders hold no dense, flatten or softmax layers".into(),
        });
    }
    Model::new("encoder", input_shape, layers, seed)
}

/// flatten -> (dense + relu) per hidden width -> dense(classes) -> softmax.
pub fn build_mlp_classifier(
    name: &str,
    feature_shape: &[usize],
    num_classes: usize,
    hidden: &[usize],
    seed: u64,
) -> Result<Model> {
    let mut layers = vec![Layer::Flatten];
    for &units in hidden {
        layers.push(Layer::Dense { units });
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Dense { units: num_classes });
    layers.push(Layer::Softmax);
    Model::new(name, feature_shape, layers, seed)
}

/// Unpool/transposed-conv stack from `feature_shape` to `target_shape`
/// (both `[C, H, W]`). The spatial ratio must be the same integer in both
/// axes; it is realized as scale-2 stages plus at most one odd stage.
pub fn build_reconstructor(
    name: &str,
    feature_shape: &[usize],
    target_shape: &[usize],
    preset: ReconstructorPreset,
    seed: u64,
) -> Result<Model> {
    let (&[fc, fh, fw], &[tc, th, tw]) = (feature_shape, target_shape) else {
        return Err(PanError::Build {
            layer: 0,
            reason: format!(
                "reconstructor needs [C,H,W] shapes, got {feature_shape:?} -> {target_shape:?}"
            ),
        });
    };
    let unreachable = || PanError::Build {
        layer: 0,
        reason: format!("target {th}x{tw} not an integer upscale of {fh}x{fw}"),
    };
    if th % fh != 0 || tw % fw != 0 || th / fh != tw / fw {
        return Err(unreachable());
    }
    let mut ratio = th / fh;
    if ratio == 1 {
        let layers = vec![Layer::TransposedConv {
            out_channels: tc,
            kernel: 1,
            stride: 1,
            pad: 0,
        }];
        return Model::new(name, feature_shape, layers, seed);
    }
    let mut scales = Vec::new();
    while ratio % 2 == 0 {
        scales.push(2);
        ratio /= 2;
    }
    if ratio > 1 {
        scales.push(ratio);
    }
    let kernel = match preset {
        ReconstructorPreset::Generic => 3,
        ReconstructorPreset::Wide => 5,
    };
    let mut layers = Vec::new();
    let mut ch = fc;
    for (i, &scale) in scales.iter().enumerate() {
        let last = i + 1 == scales.len();
        ch = match (last, preset) {
            (true, _) => tc,
            (false, ReconstructorPreset::Generic) => (ch / 2).max(4),
            (false, ReconstructorPreset::Wide) => ch.max(4),
        };
        layers.push(Layer::Unpool { scale });
        layers.push(Layer::TransposedConv {
            out_channels: ch,
            kernel,
            stride: 1,
            pad: kernel / 2,
        });
        if !last {
            layers.push(Layer::Relu);
        }
    }
    Model::new(name, feature_shape, layers, seed)
}

/// Reverses `model` layer for layer: conv <-> transposed conv, maxpool <->
/// unpool, batchnorm <-> identity, relu kept. Parameters are fresh. The
/// result maps the model's output shape back to its input shape.
pub fn mirror_of(model: &Model, name: &str, seed: u64) -> Result<Model> {
    let mut layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let in_shape = model.shape_before(i);
        let mirrored = match *layer {
            Layer::Conv {
                kernel,
                stride,
                pad,
                ..
            } => Layer::TransposedConv {
                out_channels: in_shape[0],
                kernel,
                stride,
                pad,
            },
            Layer::TransposedConv {
                kernel,
                stride,
                pad,
                ..
            } => Layer::Conv {
                out_channels: in_shape[0],
                kernel,
                stride,
                pad,
            },
            Layer::MaxPool { stride, .. } => Layer::Unpool { scale: stride },
            Layer::Unpool { scale } => Layer::MaxPool {
                window: scale,
                stride: scale,
            },
            Layer::BatchNorm => Layer::Identity,
            Layer::Identity => Layer::BatchNorm,
            Layer::Relu => Layer::Relu,
            other => {
                return Err(PanError::Build {
                    layer: i,
                    reason: format!("{other} has no mirror"),
                });
            }
        };
        layers.push(mirrored);
    }
    let m = Model::new(name, model.output_shape(), layers, seed)?;
    if m.output_shape() != model.input_shape() {
        return Err(PanError::Build {
            layer: model.layers().len().saturating_sub(1),
            reason: format!(
                "mirror maps to {:?}, not {:?}",
                m.output_shape(),
                model.input_shape()
            ),
        });
    }
    Ok(m)
}
