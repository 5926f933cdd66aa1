use std::fmt;
use std::str::FromStr;

use super::Init;
use crate::error::PanError;
use crate::ops::ConvGeom;

/// One layer of a stack. Input channel counts come from the chain, so only
/// output-side hyperparameters are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    TransposedConv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Unpool {
        scale: usize,
    },
    BatchNorm,
    /// Stand-in for a batchnorm in a mirrored stack.
    Identity,
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    MaxPool,
    Unpool,
    BatchNorm,
    Identity,
    Dense,
    Relu,
    Softmax,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::TransposedConv { .. } => LayerKind::TransposedConv,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::Unpool { .. } => LayerKind::Unpool,
            Layer::BatchNorm => LayerKind::BatchNorm,
            Layer::Identity => LayerKind::Identity,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Softmax => LayerKind::Softmax,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    /// Whether the layer changes spatial resolution.
    pub fn resamples(&self) -> bool {
        match *self {
            Layer::MaxPool { stride, .. } => stride > 1,
            Layer::Unpool { scale } => scale > 1,
            Layer::Conv { stride, .. } | Layer::TransposedConv { stride, .. } => stride > 1,
            _ => false,
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let spatial = || match *input {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(format!("needs [C,H,W] input, got {input:?}")),
        };
        match *self {
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let (c, h, w) = spatial()?;
                let g = ConvGeom::conv(c, h, w, kernel, kernel, stride, pad)
                    .map_err(|e| e.to_string())?;
                Ok(vec![out_channels, g.oh, g.ow])
            }
            Layer::TransposedConv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let (_, h, w) = spatial()?;
                let g = ConvGeom::transposed(out_channels, h, w, kernel, kernel, stride, pad)
                    .map_err(|e| e.to_string())?;
                Ok(vec![out_channels, g.h, g.w])
            }
            Layer::MaxPool { window, stride } => {
                let (c, h, w) = spatial()?;
                if window == 0 || stride == 0 || window > h || window > w {
                    return Err(format!("window {window} does not fit {h}x{w}"));
                }
                Ok(vec![
                    c,
                    (h - window) / stride + 1,
                    (w - window) / stride + 1,
                ])
            }
            Layer::Unpool { scale } => {
                let (c, h, w) = spatial()?;
                if scale == 0 {
                    return Err("scale must be >= 1".into());
                }
                Ok(vec![c, h * scale, w * scale])
            }
            Layer::BatchNorm | Layer::Identity => match input.len() {
                1 | 3 => Ok(input.to_vec()),
                _ => Err(format!("needs [C] or [C,H,W] input, got {input:?}")),
            },
            Layer::Dense { units } => match *input {
                [_] if units > 0 => Ok(vec![units]),
                [_] => Err("dense needs at least one unit".into()),
                _ => Err(format!("dense needs flat input, got {input:?}")),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Softmax => match input.len() {
                1 => Ok(input.to_vec()),
                _ => Err(format!("softmax needs flat input, got {input:?}")),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub(crate) fn param_specs(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>, Init)> {
        match *self {
            Layer::Conv {
                out_channels,
                kernel,
                ..
            } => {
                let c = input[0];
                vec![
                    (
                        "weight",
                        vec![out_channels, c, kernel, kernel],
                        Init::He(c * kernel * kernel),
                    ),
                    ("bias", vec![out_channels], Init::Const(0.0)),
                ]
            }
            Layer::TransposedConv {
                out_channels,
                kernel,
                ..
            } => {
                let k = input[0];
                vec![
                    (
                        "weight",
                        vec![k, out_channels, kernel, kernel],
                        Init::He(k * kernel * kernel),
                    ),
                    ("bias", vec![out_channels], Init::Const(0.0)),
                ]
            }
            Layer::BatchNorm => {
                let c = input[0];
                vec![
                    ("gamma", vec![c], Init::Const(1.0)),
                    ("beta", vec![c], Init::Const(0.0)),
                ]
            }
            Layer::Dense { units } => {
                let d = input[0];
                vec![
                    ("weight", vec![d, units], Init::He(d)),
                    ("bias", vec![units], Init::Const(0.0)),
                ]
            }
            _ => vec![],
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(f, "conv({out_channels},{kernel},{stride},{pad})"),
            Layer::TransposedConv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                write!(f, "tconv({out_channels},{kernel},{stride},{pad})")
            }
            Layer::MaxPool { window, stride } => write!(f, "maxpool({window},{stride})"),
            Layer::Unpool { scale } => write!(f, "unpool({scale})"),
            Layer::BatchNorm => f.write_str("batchnorm"),
            Layer::Identity => f.write_str("identity"),
            Layer::Dense { units } => write!(f, "dense({units})"),
            Layer::Relu => f.write_str("relu"),
            Layer::Softmax => f.write_str("softmax"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

/// Parses the `name(a,b,..)` form produced by `Display`.
impl FromStr for Layer {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || PanError::Config(format!("unrecognized layer `{s}`"));
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => {
                let args: Result<Vec<usize>, _> = s[open + 1..s.len() - 1]
                    .split(',')
                    .map(|a| a.trim().parse::<usize>())
                    .collect();
                (&s[..open], args.map_err(|_| bad())?)
            }
            Some(_) => return Err(bad()),
            None => (s, vec![]),
        };
        let layer = match (name, args.as_slice()) {
            ("conv", &[out_channels, kernel, stride, pad]) => Layer::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            },
            ("tconv", &[out_channels, kernel, stride, pad]) => Layer::TransposedConv {
                out_channels,
                kernel,
                stride,
                pad,
            },
            ("maxpool", &[window, stride]) => Layer::MaxPool { window, stride },
            ("unpool", &[scale]) => Layer::Unpool { scale },
            ("batchnorm", []) => Layer::BatchNorm,
            ("identity", []) => Layer::Identity,
            ("dense", &[units]) => Layer::Dense { units },
            ("relu", []) => Layer::Relu,
            ("softmax", []) => Layer::Softmax,
            ("flatten", []) => Layer::Flatten,
            _ => return Err(bad()),
        };
        Ok(layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parses_back() {
        let all = [
            Layer::Conv {
                out_channels: 8,
                kernel: 5,
                stride: 1,
                pad: 2,
            },
            Layer::TransposedConv {
                out_channels: 1,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            Layer::MaxPool {
                window: 2,
                stride: 2,
            },
            Layer::Unpool { scale: 2 },
            Layer::BatchNorm,
            Layer::Identity,
            Layer::Dense { units: 10 },
            Layer::Relu,
            Layer::Softmax,
            Layer::Flatten,
        ];
        for l in all {
            assert_eq!(l.to_string().parse::<Layer>().unwrap(), l);
        }
        assert!("conv(1,2)".parse::<Layer>().is_err());
        assert!("pool".parse::<Layer>().is_err());
    }
}
