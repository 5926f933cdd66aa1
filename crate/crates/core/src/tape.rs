//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every op appends a node holding its forward value plus whatever the
//! backward rule needs. [`Tape::backward`] walks the list once in reverse
//! and returns gradients for every registered parameter. Nodes that no
//! parameter feeds into are never differentiated.

use std::collections::BTreeMap;

use crate::error::{PanError, Result};
use crate::ops::{self, BnCache, BnStats, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    TransposedConv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        indices: Vec<u32>,
    },
    Unpool {
        x: Var,
        scale: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        p: Var,
        labels: Vec<usize>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Scale {
        x: Var,
        k: f32,
    },
    Add {
        a: Var,
        b: Var,
    },
    Inner {
        x: Var,
        weights: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Partial derivatives of a scalar loss, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientRecord {
    grads: BTreeMap<String, Tensor>,
}

impl GradientRecord {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::all_finite)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input; no gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(PanError::Contract(format!(
                "parameter {name} registered twice"
            )));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name, v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ops::conv2d_geom(xv, wv, bv, stride, pad)?;
        let out = ops::conv2d(xv, wv, bv, stride, pad)?;
        Ok(self.push(out, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    pub fn transposed_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ops::transposed_conv2d_geom(xv, wv, bv, stride, pad)?;
        let out = ops::transposed_conv2d(xv, wv, bv, stride, pad)?;
        Ok(self.push(out, Op::TransposedConv { x, w, b, geom }, &[x, w, b]))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, indices) = ops::maxpool2d(self.value(x), window, stride)?;
        Ok(self.push(out, Op::MaxPool { x, indices }, &[x]))
    }

    pub fn unpool(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = ops::unpool_nearest(self.value(x), scale)?;
        Ok(self.push(out, Op::Unpool { x, scale }, &[x]))
    }

    /// Batch normalization. With `running = None` batch statistics are used
    /// and returned (for the caller to fold into its running averages).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<&BnStats>,
    ) -> Result<(Var, Option<BnStats>)> {
        let (out, cache, stats) =
            ops::batchnorm(self.value(x), self.value(gamma), self.value(beta), running)?;
        Ok((
            self.push(
                out,
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                },
                &[x, gamma, beta],
            ),
            stats,
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        Ok(self.push(out, Op::Softmax { x }, &[x]))
    }

    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let loss = ops::cross_entropy(self.value(p), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                p,
                labels: labels.to_vec(),
            },
            &[p],
        ))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = ops::mse(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Collapses every non-leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = vec![v.batch(), v.per_sample()];
        self.reshape(x, shape)
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale { x, k }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(PanError::Shape(format!(
                "add shapes differ: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Scalar `Σ x ⊙ weights` (weights are constants).
    pub fn inner(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(PanError::Shape(format!(
                "inner shapes differ: {:?} vs {:?}",
                xv.shape(),
                weights.shape()
            )));
        }
        let s = xv.dot(&weights) as f32;
        Ok(self.push(Tensor::scalar(s), Op::Inner { x, weights }, &[x]))
    }

    /// Gradients of scalar `loss` for every registered parameter. Parameters
    /// the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<GradientRecord> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(PanError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.local_grads(node, &g) {
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(gi.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
            // keep leaf gradients for the report
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let mut record = GradientRecord::default();
        for (name, v) in &self.params {
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            record.insert(name.clone(), g);
        }
        Ok(record)
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let need = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) =
                    ops::conv2d_backward(self.value(*x), self.value(*w), geom, g, need(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                out.extend(dx.map(|d| (*x, d)));
                out
            }
            Op::TransposedConv { x, w, b, geom } => {
                let (dx, dw, db) = ops::transposed_conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    geom,
                    g,
                    need(*x),
                );
                let mut out = vec![(*w, dw), (*b, db)];
                out.extend(dx.map(|d| (*x, d)));
                out
            }
            Op::MaxPool { x, indices } => {
                vec![(
                    *x,
                    ops::maxpool2d_backward(self.value(*x).shape(), indices, g),
                )]
            }
            Op::Unpool { x, scale } => {
                vec![(
                    *x,
                    ops::unpool_nearest_backward(self.value(*x).shape(), *scale, g),
                )]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (dx, dg, db) = ops::batchnorm_backward(self.value(*gamma), cache, g);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), g, need(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                out.extend(dx.map(|d| (*x, d)));
                out
            }
            Op::Relu { x } => vec![(*x, ops::relu_backward(self.value(*x), g))],
            Op::Softmax { x } => vec![(*x, ops::softmax_backward(&node.value, g))],
            Op::CrossEntropy { p, labels } => {
                vec![(
                    *p,
                    ops::cross_entropy_backward(self.value(*p), labels, g.data()[0]),
                )]
            }
            Op::Mse { a, b } => {
                let da = ops::mse_backward(self.value(*a), self.value(*b), g.data()[0]);
                let db = da.map(|v| -v);
                vec![(*a, da), (*b, db)]
            }
            Op::Reshape { x } => {
                vec![(
                    *x,
                    g.clone()
                        .reshape(self.value(*x).shape().to_vec())
                        .expect("reshape grad"),
                )]
            }
            Op::Scale { x, k } => vec![(*x, g.map(|v| v * k))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Inner { x, weights } => {
                let s = g.data()[0];
                vec![(*x, weights.map(|w| w * s))]
            }
        }
    }
}
