//! Four-stage alternating training of encoder, utility discriminator,
//! privacy discriminator and reconstructor.
//!
//! Every mini-batch runs `k` rounds of (a) encoder+UD descent on the
//! utility loss, (b) PD descent on the privacy-label loss against frozen
//! features, (c) PR descent on reconstruction error against frozen
//! features, then one (d) encoder+UD descent on the combined objective
//! `λ1·C_u − λ2·C_p2 − λ3·C_p1`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::adam::AdamState;
use crate::data::{Batch, Dataset, Split};
use crate::error::{PanError, Result};
use crate::model::zoo::{self, EncoderPreset, ReconstructorPreset};
use crate::model::{Bound, Model};
use crate::ops::BnStats;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
    /// inner steps per mini-batch
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// stage learning rates (a), (b), (c), (d)
    pub lr: [f32; 4],
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.4,
            lambda2: 0.3,
            lambda3: 0.3,
            k: 3,
            epochs: 20,
            batch_size: 64,
            lr: [1e-3; 4],
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PanError::Config(m));
        if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return bad(format!("lambda1 must be positive, got {}", self.lambda1));
        }
        for (name, v) in [("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.k == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("k, epochs and batch size must be positive".into());
        }
        if let Some(lr) = self.lr.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return bad(format!("learning rates must be positive, got {lr}"));
        }
        Ok(())
    }
}

/// Which reconstructor the trainer co-trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructorChoice {
    Mirror,
    Preset(ReconstructorPreset),
}

impl fmt::Display for ReconstructorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReconstructorChoice::Mirror => f.write_str("mirror"),
            ReconstructorChoice::Preset(p) => p.fmt(f),
        }
    }
}

impl FromStr for ReconstructorChoice {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mirror" => Ok(ReconstructorChoice::Mirror),
            other => other.parse().map(ReconstructorChoice::Preset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub encoder: EncoderPreset,
    pub ud_hidden: Vec<usize>,
    pub pd_hidden: Vec<usize>,
    pub reconstructor: ReconstructorChoice,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder: EncoderPreset::Lenet,
            ud_hidden: vec![128],
            pd_hidden: vec![128],
            reconstructor: ReconstructorChoice::Mirror,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanModels {
    pub encoder: Model,
    pub ud: Model,
    pub pd: Option<Model>,
    pub pr: Model,
}

/// Fresh models for `input_shape = [C,H,W]`. The PD is built only when
/// `z_classes` is given.
pub fn build_models(
    arch: &Architecture,
    input_shape: &[usize],
    y_classes: usize,
    z_classes: Option<usize>,
    seed: u64,
) -> Result<PanModels> {
    let s = |tag| rng::derive_seed(seed, tag);
    let encoder = zoo::build_encoder(input_shape, &arch.encoder, s("encoder"))?;
    let feat = encoder.output_shape().to_vec();
    let ud = zoo::build_mlp_classifier("ud", &feat, y_classes, &arch.ud_hidden, s("ud"))?;
    let pd = z_classes
        .map(|zc| zoo::build_mlp_classifier("pd", &feat, zc, &arch.pd_hidden, s("pd")))
        .transpose()?;
    let pr = match arch.reconstructor {
        ReconstructorChoice::Mirror => zoo::mirror_of(&encoder, "pr", s("pr"))?,
        ReconstructorChoice::Preset(p) => {
            zoo::build_reconstructor("pr", &feat, input_shape, p, s("pr"))?
        }
    };
    Ok(PanModels {
        encoder,
        ud,
        pd,
        pr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub c_u: f32,
    pub c_p1: Option<f32>,
    pub c_p2: f32,
    pub c_sum: f32,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "epoch,c_u,c_p1,c_p2,c_sum";

    /// Loss history without timings, so equal runs give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let p1 = r.c_p1.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.epoch, r.c_u, p1, r.c_p2, r.c_sum)
                .expect("write to string");
        }
        out
    }
}

/// Per-batch losses: means over the `k` inner rounds for (a)-(c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub c_u: f32,
    pub c_p1: Option<f32>,
    pub c_p2: f32,
    pub c_sum: f32,
}

/// The three loss values that make up `C_sum`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CSumParts {
    pub c_u: f32,
    pub c_p1: Option<f32>,
    pub c_p2: Option<f32>,
    pub c_sum: f32,
}

struct CSumGraph {
    loss: Var,
    parts: CSumParts,
    enc_stats: Vec<(usize, BnStats)>,
    ud_stats: Vec<(usize, BnStats)>,
}

/// Records `C_sum` on `tape`. Terms with a zero multiplier are left out of
/// the graph entirely, so `λ2 = λ3 = 0` gives exactly `λ1·C_u`.
fn c_sum_graph(
    tape: &mut Tape,
    models: &PanModels,
    bound: [&Bound; 2],
    batch: &Batch,
    lambdas: [f32; 3],
) -> Result<CSumGraph> {
    let [l1, l2, l3] = lambdas;
    let x = tape.constant(batch.x.clone());
    let enc = models.encoder.forward(tape, bound[0], x)?;
    let ud = models.ud.forward(tape, bound[1], enc.out)?;
    let ce_y = tape.cross_entropy(ud.out, &batch.y)?;
    let mut loss = tape.scale(ce_y, l1);
    let mut parts = CSumParts {
        c_u: tape.value(ce_y).data()[0],
        c_p1: None,
        c_p2: None,
        c_sum: 0.0,
    };
    if l2 > 0.0 {
        let pr_bound = models.pr.bind(tape, false)?;
        let rec = models.pr.forward(tape, &pr_bound, enc.out)?;
        let mse = tape.mse(rec.out, x)?;
        parts.c_p2 = Some(tape.value(mse).data()[0]);
        let term = tape.scale(mse, -l2);
        loss = tape.add(loss, term)?;
    }
    if l3 > 0.0 {
        let pd = models
            .pd
            .as_ref()
            .ok_or_else(|| PanError::Config("lambda3 > 0 needs a privacy discriminator".into()))?;
        let z = batch
            .z
            .as_ref()
            .ok_or_else(|| PanError::Config("lambda3 > 0 needs privacy labels".into()))?;
        let pd_bound = pd.bind(tape, false)?;
        let p = pd.forward(tape, &pd_bound, enc.out)?;
        let ce_z = tape.cross_entropy(p.out, z)?;
        parts.c_p1 = Some(tape.value(ce_z).data()[0]);
        let term = tape.scale(ce_z, -l3);
        loss = tape.add(loss, term)?;
    }
    parts.c_sum = tape.value(loss).data()[0];
    Ok(CSumGraph {
        loss,
        parts,
        enc_stats: enc.batch_stats,
        ud_stats: ud.batch_stats,
    })
}

/// Evaluates `λ1·C_u − λ2·C_p2 − λ3·C_p1` on one batch without touching
/// any model (batchnorm uses batch statistics in training mode).
pub fn compute_c_sum(batch: &Batch, models: &PanModels, lambdas: [f32; 3]) -> Result<CSumParts> {
    let mut tape = Tape::new();
    let be = models.encoder.bind(&mut tape, false)?;
    let bu = models.ud.bind(&mut tape, false)?;
    Ok(c_sum_graph(&mut tape, models, [&be, &bu], batch, lambdas)?.parts)
}

fn finite(v: f32, stage: &'static str, epoch: usize) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PanError::NonFinite { stage, epoch })
    }
}

/// Stage-by-stage driver. [`train_pan`] is the usual entry point; the
/// individual stages are public so their isolation can be checked.
#[derive(Debug, Clone)]
pub struct PanTrainer {
    config: TrainingConfig,
    models: PanModels,
    adam: [AdamState; 4],
    epoch: usize,
}

impl PanTrainer {
    pub fn new(models: PanModels, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if config.lambda3 > 0.0 && models.pd.is_none() {
            return Err(PanError::Config(
                "lambda3 > 0 needs a privacy discriminator".into(),
            ));
        }
        Ok(Self {
            config,
            models,
            adam: Default::default(),
            epoch: 0,
        })
    }

    pub fn models(&self) -> &PanModels {
        &self.models
    }

    pub fn into_models(self) -> PanModels {
        self.models
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    /// (a) encoder+UD descent on the utility cross-entropy.
    pub fn utility_step(&mut self, batch: &Batch) -> Result<f32> {
        let m = &mut self.models;
        let mut tape = Tape::new();
        let be = m.encoder.bind(&mut tape, true)?;
        let bu = m.ud.bind(&mut tape, true)?;
        let x = tape.constant(batch.x.clone());
        let enc = m.encoder.forward(&mut tape, &be, x)?;
        let ud = m.ud.forward(&mut tape, &bu, enc.out)?;
        let loss = tape.cross_entropy(ud.out, &batch.y)?;
        let c_u = finite(tape.value(loss).data()[0], "utility", self.epoch)?;
        let grads = tape.backward(loss)?;
        self.adam[0].step(
            m.encoder.params_mut().chain(m.ud.params_mut()),
            &grads,
            self.config.lr[0],
        )?;
        m.encoder.commit_stats(&enc.batch_stats);
        m.ud.commit_stats(&ud.batch_stats);
        Ok(c_u)
    }

    /// Encoder output with parameters held constant; batchnorm uses batch
    /// statistics but running statistics are left alone.
    pub fn frozen_features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let be = self.models.encoder.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone());
        let f = self.models.encoder.forward(&mut tape, &be, xv)?;
        Ok(tape.value(f.out).clone())
    }

    /// (b) PD descent on the privacy-label cross-entropy.
    pub fn discriminator_step(&mut self, features: &Tensor, z: &[usize]) -> Result<f32> {
        let Some(pd) = self.models.pd.as_mut() else {
            return Err(PanError::Config("no privacy discriminator".into()));
        };
        let mut tape = Tape::new();
        let bp = pd.bind(&mut tape, true)?;
        let f = tape.constant(features.clone());
        let out = pd.forward(&mut tape, &bp, f)?;
        let loss = tape.cross_entropy(out.out, z)?;
        let v = finite(
            tape.value(loss).data()[0],
            "privacy-discriminator",
            self.epoch,
        )?;
        let grads = tape.backward(loss)?;
        self.adam[1].step(pd.params_mut(), &grads, self.config.lr[1])?;
        pd.commit_stats(&out.batch_stats);
        Ok(v)
    }

    /// (c) PR descent on reconstruction error.
    pub fn reconstructor_step(&mut self, features: &Tensor, x: &Tensor) -> Result<f32> {
        let pr = &mut self.models.pr;
        let mut tape = Tape::new();
        let bp = pr.bind(&mut tape, true)?;
        let f = tape.constant(features.clone());
        let target = tape.constant(x.clone());
        let out = pr.forward(&mut tape, &bp, f)?;
        let loss = tape.mse(out.out, target)?;
        let v = finite(tape.value(loss).data()[0], "reconstructor", self.epoch)?;
        let grads = tape.backward(loss)?;
        self.adam[2].step(pr.params_mut(), &grads, self.config.lr[2])?;
        pr.commit_stats(&out.batch_stats);
        Ok(v)
    }

    /// (d) encoder+UD descent on `C_sum`.
    pub fn adversarial_step(&mut self, batch: &Batch) -> Result<CSumParts> {
        let c = &self.config;
        let lambdas = [c.lambda1, c.lambda2, c.lambda3];
        let mut tape = Tape::new();
        let be = self.models.encoder.bind(&mut tape, true)?;
        let bu = self.models.ud.bind(&mut tape, true)?;
        let g = c_sum_graph(&mut tape, &self.models, [&be, &bu], batch, lambdas)?;
        finite(g.parts.c_sum, "adversarial", self.epoch)?;
        let grads = tape.backward(g.loss)?;
        let m = &mut self.models;
        self.adam[3].step(
            m.encoder.params_mut().chain(m.ud.params_mut()),
            &grads,
            c.lr[3],
        )?;
        m.encoder.commit_stats(&g.enc_stats);
        m.ud.commit_stats(&g.ud_stats);
        Ok(g.parts)
    }

    pub fn run_batch(&mut self, batch: &Batch) -> Result<BatchLosses> {
        let k = self.config.k;
        let (mut c_u, mut c_p1, mut c_p2) = (0.0f64, 0.0f64, 0.0f64);
        let use_pd = self.config.lambda3 > 0.0;
        for _ in 0..k {
            c_u += self.utility_step(batch)? as f64;
            let feats = self.frozen_features(&batch.x)?;
            if use_pd {
                let z = batch
                    .z
                    .as_ref()
                    .ok_or_else(|| PanError::Config("lambda3 > 0 needs privacy labels".into()))?;
                c_p1 += self.discriminator_step(&feats, z)? as f64;
            }
            c_p2 += self.reconstructor_step(&feats, &batch.x)? as f64;
        }
        let parts = self.adversarial_step(batch)?;
        let k = k as f64;
        Ok(BatchLosses {
            c_u: (c_u / k) as f32,
            c_p1: use_pd.then_some((c_p1 / k) as f32),
            c_p2: (c_p2 / k) as f32,
            c_sum: parts.c_sum,
        })
    }

    /// One pass over `train` in seeded mini-batches.
    pub fn run_epoch(&mut self, train: &Split) -> Result<EpochRecord> {
        let start = Instant::now();
        let batches = train.batches(self.config.batch_size, self.config.seed, self.epoch)?;
        let (mut c_u, mut c_p1, mut c_p2, mut c_sum) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for b in &batches {
            let l = self.run_batch(b)?;
            c_u += l.c_u as f64;
            c_p1 += l.c_p1.unwrap_or(0.0) as f64;
            c_p2 += l.c_p2 as f64;
            c_sum += l.c_sum as f64;
        }
        let n = batches.len().max(1) as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            c_u: (c_u / n) as f32,
            c_p1: (self.config.lambda3 > 0.0).then_some((c_p1 / n) as f32),
            c_p2: (c_p2 / n) as f32,
            c_sum: (c_sum / n) as f32,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(record)
    }
}

/// Trains from fresh models built from `arch` and `config.seed`.
/// `on_epoch` sees each record as it completes.
pub fn train_pan_with(
    dataset: &Dataset,
    config: &TrainingConfig,
    arch: &Architecture,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(PanModels, TrainingHistory)> {
    config.validate()?;
    if config.lambda3 > 0.0 && !dataset.has_privacy_labels() {
        return Err(PanError::Config(
            "lambda3 > 0 needs a dataset with privacy labels".into(),
        ));
    }
    let z_classes = if config.lambda3 > 0.0 {
        dataset.z_classes()
    } else {
        None
    };
    let models = build_models(
        arch,
        dataset.sample_shape(),
        dataset.y_classes(),
        z_classes,
        config.seed,
    )?;
    let mut trainer = PanTrainer::new(models, config.clone())?;
    let train = dataset.train();
    let mut history = TrainingHistory::default();
    for _ in 0..config.epochs {
        let r = trainer.run_epoch(&train)?;
        on_epoch(&r);
        history.records.push(r);
    }
    let mut models = trainer.into_models();
    for m in [&mut models.encoder, &mut models.ud, &mut models.pr]
        .into_iter()
        .chain(models.pd.as_mut())
    {
        m.set_training(false);
    }
    Ok((models, history))
}

pub fn train_pan(
    dataset: &Dataset,
    config: &TrainingConfig,
    arch: &Architecture,
) -> Result<(PanModels, TrainingHistory)> {
    train_pan_with(dataset, config, arch, |_| {})
}

/// Reconstruction-only adversary: `λ3` is forced to zero.
pub fn train_pan1(
    dataset: &Dataset,
    config: &TrainingConfig,
    arch: &Architecture,
) -> Result<(PanModels, TrainingHistory)> {
    let config = TrainingConfig {
        lambda3: 0.0,
        ..config.clone()
    };
    train_pan(dataset, &config, arch)
}
