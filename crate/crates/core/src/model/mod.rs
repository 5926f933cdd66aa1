//! Layer stacks with named parameters, evaluated on a [`Tape`].

mod layer;
pub mod zoo;

use std::collections::BTreeMap;

pub use layer::{Layer, LayerKind};

use crate::error::{PanError, Result};
use crate::ops::BnStats;
use crate::rng::{self, PanRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// A validated layer stack plus its parameters and batchnorm running stats.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// per-sample output shape after each layer
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Tensor>,
    running: BTreeMap<usize, BnStats>,
    training: bool,
}

/// Parameter handles of one model registered on a tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

/// Output of a forward pass: the result node and any batchnorm batch
/// statistics (layer index, stats) computed in training mode.
#[derive(Debug)]
pub struct Forward {
    pub out: Var,
    pub batch_stats: Vec<(usize, BnStats)>,
}

impl Model {
    /// Validates the layer chain against a per-sample `input_shape` and
    /// initializes parameters (He-uniform weights, zero biases, unit gamma).
    pub fn new(
        name: impl Into<String>,
        input_shape: &[usize],
        layers: Vec<Layer>,
        seed: u64,
    ) -> Result<Self> {
        let name = name.into();
        let shapes = infer_shapes(input_shape, &layers)?;
        let mut rng = rng::rng(seed);
        let mut params = BTreeMap::new();
        let mut running = BTreeMap::new();
        let mut prev = input_shape.to_vec();
        for (i, (layer, out)) in layers.iter().zip(&shapes).enumerate() {
            for (suffix, shape, init) in layer.param_specs(&prev) {
                let t = match init {
                    Init::He(fan_in) => he_uniform(&shape, fan_in, &mut rng),
                    Init::Const(v) => Tensor::full(&shape, v),
                };
                params.insert(param_name(&name, i, suffix), t);
            }
            if matches!(layer, Layer::BatchNorm) {
                let c = prev[0];
                running.insert(
                    i,
                    BnStats {
                        mean: vec![0.0; c],
                        var: vec![1.0; c],
                    },
                );
            }
            prev = out.clone();
        }
        Ok(Self {
            name,
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            running,
            training: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Shape entering layer `i`.
    pub fn shape_before(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, on: bool) {
        self.training = on;
    }

    pub fn running_stats(&self) -> &BTreeMap<usize, BnStats> {
        &self.running
    }

    /// Registers the parameters on `tape`: tracked when `trainable`,
    /// constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.params {
            let var = if trainable {
                tape.param(k.clone(), v.clone())?
            } else {
                tape.constant(v.clone())
            };
            vars.insert(k.clone(), var);
        }
        Ok(Bound { vars })
    }

    fn p(&self, bound: &Bound, i: usize, suffix: &str) -> Var {
        bound.vars[&param_name(&self.name, i, suffix)]
    }

    /// Applies the layers in order. Batchnorm uses batch statistics in
    /// training mode and running statistics otherwise.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Forward> {
        let got = tape.value(x).shape();
        if got.len() != self.input_shape.len() + 1 || got[1..] != self.input_shape[..] {
            return Err(PanError::Shape(format!(
                "model {} expects [N, {:?}], got {:?}",
                self.name, self.input_shape, got
            )));
        }
        let mut h = x;
        let mut batch_stats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match *layer {
                Layer::Conv { stride, pad, .. } => tape.conv2d(
                    h,
                    self.p(bound, i, "weight"),
                    self.p(bound, i, "bias"),
                    stride,
                    pad,
                )?,
                Layer::TransposedConv { stride, pad, .. } => tape.transposed_conv2d(
                    h,
                    self.p(bound, i, "weight"),
                    self.p(bound, i, "bias"),
                    stride,
                    pad,
                )?,
                Layer::MaxPool { window, stride } => tape.maxpool2d(h, window, stride)?,
                Layer::Unpool { scale } => tape.unpool(h, scale)?,
                Layer::BatchNorm => {
                    let (g, b) = (self.p(bound, i, "gamma"), self.p(bound, i, "beta"));
                    let running = (!self.training).then(|| &self.running[&i]);
                    let (out, stats) = tape.batchnorm(h, g, b, running)?;
                    if let Some(s) = stats {
                        batch_stats.push((i, s));
                    }
                    out
                }
                Layer::Identity => h,
                Layer::Dense { .. } => {
                    tape.dense(h, self.p(bound, i, "weight"), self.p(bound, i, "bias"))?
                }
                Layer::Relu => tape.relu(h),
                Layer::Softmax => tape.softmax(h)?,
                Layer::Flatten => tape.flatten(h)?,
            };
        }
        Ok(Forward {
            out: h,
            batch_stats,
        })
    }

    /// Folds batch statistics from a training-mode forward into the
    /// running averages.
    pub fn commit_stats(&mut self, stats: &[(usize, BnStats)]) {
        for (i, s) in stats {
            if let Some(r) = self.running.get_mut(i) {
                crate::ops::update_running(r, s);
            }
        }
    }

    /// Untracked forward pass over `input` in chunks of `chunk` samples.
    pub fn predict(&self, input: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = input.batch();
        let chunk = chunk.max(1);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false)?;
            let x = tape.constant(input.slice_rows(start, end)?);
            let f = self.forward(&mut tape, &bound, x)?;
            parts.push(tape.value(f.out).clone());
            start = end;
        }
        if parts.is_empty() {
            let mut shape = vec![0];
            shape.extend_from_slice(self.output_shape());
            return Tensor::new(shape, vec![]);
        }
        Tensor::concat_rows(&parts)
    }

    /// Every tensor needed to restore this model: parameters plus running
    /// statistics, keyed by name.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params.clone();
        for (i, s) in &self.running {
            let c = s.mean.len();
            out.insert(
                param_name(&self.name, *i, "running_mean"),
                Tensor::new(vec![c], s.mean.clone()).unwrap(),
            );
            out.insert(
                param_name(&self.name, *i, "running_var"),
                Tensor::new(vec![c], s.var.clone()).unwrap(),
            );
        }
        out
    }

    /// Replaces parameters and running statistics from `tensors`. The set of
    /// names and every shape must match exactly.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(PanError::Contract(format!(
                "model {} has {} tensors, file has {}",
                self.name,
                expected.len(),
                tensors.len()
            )));
        }
        for (k, v) in &expected {
            match tensors.get(k) {
                Some(t) if t.shape() == v.shape() => {}
                Some(t) => {
                    return Err(PanError::Shape(format!(
                        "tensor {k}: expected {:?}, got {:?}",
                        v.shape(),
                        t.shape()
                    )))
                }
                None => return Err(PanError::Contract(format!("missing tensor {k}"))),
            }
        }
        for (k, v) in self.params.iter_mut() {
            *v = tensors[k].clone();
        }
        let name = self.name.clone();
        for (i, s) in self.running.iter_mut() {
            s.mean = tensors[&param_name(&name, *i, "running_mean")]
                .data()
                .to_vec();
            s.var = tensors[&param_name(&name, *i, "running_var")]
                .data()
                .to_vec();
        }
        Ok(())
    }
}

pub(crate) enum Init {
    He(usize),
    Const(f32),
}

fn param_name(model: &str, layer: usize, suffix: &str) -> String {
    format!("{model}.{layer}.{suffix}")
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut PanRng) -> Tensor {
    let limit = (6.0 / fan_in.max(1) as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// Per-sample output shape after each layer, or a build error naming the
/// first layer that does not chain.
pub fn infer_shapes(input: &[usize], layers: &[Layer]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    if cur.is_empty() || cur.contains(&0) {
        return Err(PanError::Build {
            layer: 0,
            reason: format!("invalid input shape {input:?}"),
        });
    }
    for (i, l) in layers.iter().enumerate() {
        cur = l.output_shape(&cur).map_err(|reason| PanError::Build {
            layer: i,
            reason: format!("{l}: {reason}"),
        })?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}
