//! Finite-difference verification of every tape op.
//!
//! Each case draws small random shapes and values, reduces the op output to
//! a scalar with random constant weights, and compares the tape gradient of
//! every input against central differences. The error of a case is
//! `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖, 1e-6)` over all inputs together.

use std::fmt;

use rand::Rng;

use crate::error::Result;
use crate::rng::{self, PanRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckedOp {
    Conv2d,
    TransposedConv2d,
    MaxPool2d,
    Unpool,
    BatchNorm,
    Dense,
    Relu,
    Softmax,
    CrossEntropy,
    Mse,
    Flatten,
}

impl CheckedOp {
    pub const ALL: [CheckedOp; 11] = [
        CheckedOp::Conv2d,
        CheckedOp::TransposedConv2d,
        CheckedOp::MaxPool2d,
        CheckedOp::Unpool,
        CheckedOp::BatchNorm,
        CheckedOp::Dense,
        CheckedOp::Relu,
        CheckedOp::Softmax,
        CheckedOp::CrossEntropy,
        CheckedOp::Mse,
        CheckedOp::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedOp::Conv2d => "conv2d",
            CheckedOp::TransposedConv2d => "transposed_conv2d",
            CheckedOp::MaxPool2d => "maxpool2d",
            CheckedOp::Unpool => "unpool",
            CheckedOp::BatchNorm => "batchnorm",
            CheckedOp::Dense => "dense",
            CheckedOp::Relu => "relu",
            CheckedOp::Softmax => "softmax",
            CheckedOp::CrossEntropy => "cross_entropy",
            CheckedOp::Mse => "mse",
            CheckedOp::Flatten => "flatten",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }
}

impl fmt::Display for CheckedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub cases: usize,
    pub step: f32,
    pub tolerance: f64,
    /// Multiply this op's analytic gradient by 1.1 (fault injection).
    pub corrupt: Option<CheckedOp>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 20,
            step: 1e-3,
            tolerance: 1e-3,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: CheckedOp,
    pub cases: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub ops: Vec<OpReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|r| r.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OpReport> {
        self.ops.iter().filter(|r| r.max_rel_error > self.tolerance)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.ops {
            let verdict = if r.max_rel_error <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{:<18} cases={:<3} max_rel_error={:.3e} {verdict}",
                r.op.name(),
                r.cases,
                r.max_rel_error
            )?;
        }
        Ok(())
    }
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut ops = Vec::with_capacity(CheckedOp::ALL.len());
    for op in CheckedOp::ALL {
        let mut worst = 0.0f64;
        for case in 0..opts.cases {
            let mut r = rng::rng(rng::derive_seed(opts.seed, &format!("{op}/{case}")));
            let c = Case::draw(op, &mut r);
            worst = worst.max(c.rel_error(opts.step, opts.corrupt == Some(op))?);
        }
        ops.push(OpReport {
            op,
            cases: opts.cases,
            max_rel_error: worst,
        });
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        ops,
    })
}

struct Case {
    op: CheckedOp,
    inputs: Vec<Tensor>,
    stride: usize,
    pad: usize,
    window: usize,
    labels: Vec<usize>,
    weights: Option<Tensor>,
}

fn uniform(shape: &[usize], r: &mut PanRng, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Distinct values at least 0.05 apart in random order, so that no
/// finite-difference step flips a max or a relu.
fn separated(shape: &[usize], r: &mut PanRng, offset: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let perm = rng::permutation(n, r);
    Tensor::from_fn(shape, |i| offset + 0.05 * perm[i] as f32 + 0.025)
}

impl Case {
    fn draw(op: CheckedOp, r: &mut PanRng) -> Case {
        let mut c = Case {
            op,
            inputs: vec![],
            stride: 1,
            pad: 0,
            window: 1,
            labels: vec![],
            weights: None,
        };
        let n = r.random_range(1..=3);
        match op {
            CheckedOp::Conv2d => {
                let (ch, k) = (r.random_range(1..=3), r.random_range(1..=3));
                let (h, w) = (r.random_range(3..=6), r.random_range(3..=6));
                let kernel = r.random_range(1..=3);
                c.stride = r.random_range(1..=2);
                c.pad = r.random_range(0..=1);
                c.inputs = vec![
                    uniform(&[n, ch, h, w], r, -1.0, 1.0),
                    uniform(&[k, ch, kernel, kernel], r, -1.0, 1.0),
                    uniform(&[k], r, -0.5, 0.5),
                ];
            }
            CheckedOp::TransposedConv2d => {
                let (kin, out) = (r.random_range(1..=3), r.random_range(1..=3));
                let (h, w) = (r.random_range(2..=4), r.random_range(2..=4));
                let kernel = r.random_range(2..=3);
                c.stride = r.random_range(1..=2);
                c.pad = r.random_range(0..=1);
                c.inputs = vec![
                    uniform(&[n, kin, h, w], r, -1.0, 1.0),
                    uniform(&[kin, out, kernel, kernel], r, -1.0, 1.0),
                    uniform(&[out], r, -0.5, 0.5),
                ];
            }
            CheckedOp::MaxPool2d => {
                let ch = r.random_range(1..=2);
                let (h, w) = (r.random_range(4..=6), r.random_range(4..=6));
                c.window = r.random_range(2..=3);
                c.stride = r.random_range(1..=c.window);
                c.inputs = vec![separated(&[n, ch, h, w], r, -1.0)];
            }
            CheckedOp::Unpool => {
                c.window = r.random_range(1..=3);
                c.inputs = vec![uniform(&[n, r.random_range(1..=3), 2, 3], r, -1.0, 1.0)];
            }
            CheckedOp::BatchNorm => {
                let ch = r.random_range(1..=3);
                let x = if r.random_bool(0.5) {
                    uniform(&[n + 2, ch], r, -2.0, 2.0)
                } else {
                    uniform(&[n + 1, ch, 2, 3], r, -2.0, 2.0)
                };
                c.inputs = vec![x, uniform(&[ch], r, 0.5, 1.5), uniform(&[ch], r, -0.5, 0.5)];
            }
            CheckedOp::Dense => {
                let (d, o) = (r.random_range(1..=6), r.random_range(1..=5));
                c.inputs = vec![
                    uniform(&[n, d], r, -1.0, 1.0),
                    uniform(&[d, o], r, -1.0, 1.0),
                    uniform(&[o], r, -0.5, 0.5),
                ];
            }
            CheckedOp::Relu => {
                let len = r.random_range(2..=5);
                let x = separated(&[n, len], r, 0.0);
                let shift = 0.05 * ((n * len) / 2) as f32;
                c.inputs = vec![x.map(|v| v - shift)];
            }
            CheckedOp::Softmax => {
                c.inputs = vec![uniform(&[n, r.random_range(2..=6)], r, -2.0, 2.0)];
            }
            CheckedOp::CrossEntropy => {
                let classes = r.random_range(2..=6);
                c.inputs = vec![uniform(&[n, classes], r, -2.0, 2.0)];
                c.labels = (0..n).map(|_| r.random_range(0..classes)).collect();
            }
            CheckedOp::Mse => {
                let shape = [n, r.random_range(1..=5)];
                c.inputs = vec![uniform(&shape, r, -1.0, 1.0), uniform(&shape, r, -1.0, 1.0)];
            }
            CheckedOp::Flatten => {
                c.inputs = vec![uniform(&[n, 2, r.random_range(1..=3), 2], r, -1.0, 1.0)];
            }
        }
        if !matches!(op, CheckedOp::CrossEntropy | CheckedOp::Mse) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = c.inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = c
                .apply(&mut tape, &vars)
                .expect("gradcheck case shapes are valid");
            c.weights = Some(uniform(tape.value(out).shape(), r, -1.0, 1.0));
        }
        c
    }

    fn apply(&self, tape: &mut Tape, v: &[Var]) -> Result<Var> {
        match self.op {
            CheckedOp::Conv2d => tape.conv2d(v[0], v[1], v[2], self.stride, self.pad),
            CheckedOp::TransposedConv2d => {
                tape.transposed_conv2d(v[0], v[1], v[2], self.stride, self.pad)
            }
            CheckedOp::MaxPool2d => tape.maxpool2d(v[0], self.window, self.stride),
            CheckedOp::Unpool => tape.unpool(v[0], self.window),
            CheckedOp::BatchNorm => Ok(tape.batchnorm(v[0], v[1], v[2], None)?.0),
            CheckedOp::Dense => tape.dense(v[0], v[1], v[2]),
            CheckedOp::Relu => Ok(tape.relu(v[0])),
            CheckedOp::Softmax => tape.softmax(v[0]),
            CheckedOp::CrossEntropy => {
                let p = tape.softmax(v[0])?;
                tape.cross_entropy(p, &self.labels)
            }
            CheckedOp::Mse => tape.mse(v[0], v[1]),
            CheckedOp::Flatten => tape.flatten(v[0]),
        }
    }

    /// Loss in f64 from constant inputs; the final reduction is done in
    /// double precision to keep rounding out of the differences.
    fn loss(&self, inputs: &[Tensor]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.apply(&mut tape, &vars)?;
        Ok(match &self.weights {
            Some(w) => tape.value(out).dot(w),
            None => tape.value(out).data()[0] as f64,
        })
    }

    fn analytic(&self, corrupt: bool) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        for (i, t) in self.inputs.iter().enumerate() {
            vars.push(tape.param(format!("in{i}"), t.clone())?);
        }
        let out = self.apply(&mut tape, &vars)?;
        let loss = match &self.weights {
            Some(w) => tape.inner(out, w.clone())?,
            None => out,
        };
        let grads = tape.backward(loss)?;
        let k = if corrupt { 1.1 } else { 1.0 };
        Ok((0..self.inputs.len())
            .map(|i| {
                grads
                    .get(&format!("in{i}"))
                    .expect("registered")
                    .map(|g| g * k)
            })
            .collect())
    }

    fn rel_error(&self, h: f32, corrupt: bool) -> Result<f64> {
        let analytic = self.analytic(corrupt)?;
        let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
        let mut work = self.inputs.clone();
        for (i, a) in analytic.iter().enumerate() {
            for j in 0..work[i].len() {
                let x0 = work[i].data()[j];
                let (xp, xm) = (x0 + h, x0 - h);
                work[i].data_mut()[j] = xp;
                let fp = self.loss(&work)?;
                work[i].data_mut()[j] = xm;
                let fm = self.loss(&work)?;
                work[i].data_mut()[j] = x0;
                let fd = (fp - fm) / (xp as f64 - xm as f64);
                let g = a.data()[j] as f64;
                diff += (g - fd).powi(2);
                na += g * g;
                nf += fd * fd;
            }
        }
        Ok(diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-6))
    }
}
