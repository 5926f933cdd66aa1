//! The subcommands as library functions. Each writes its artifacts under
//! `cfg.output_dir` and returns what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pan_core::attack::{self, TradeoffPoint};
use pan_core::baselines;
use pan_core::data::{self, Dataset, Split};
use pan_core::gradcheck::{self, GradcheckOptions, GradcheckReport};
use pan_core::model::zoo;
use pan_core::rng::derive_seed;
use pan_core::trainer::{self, EpochRecord, PanModels, TrainingConfig, TrainingHistory};
use pan_core::{Model, PanError, Result, Tensor};

use crate::config::{DatasetKind, RunConfig};
use crate::modelfile::ModelFile;
use crate::report::{self, widen};

pub const ENCODER_FILE: &str = "encoder.panw";
pub const HISTORY_FILE: &str = "history.csv";
pub const FEATURES_FILE: &str = "features.panw";

/// The configured dataset, subsampled to the configured split sizes.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let full = match d.kind {
        DatasetKind::Mnist => data::load_idx(&d.images, &d.labels)?,
        DatasetKind::Synthetic => data::make_synthetic_dual(
            d.train_size + d.test_size,
            derive_seed(cfg.seed, "synthetic"),
        )?,
    };
    full.subsample(d.train_size, d.test_size, derive_seed(cfg.seed, "dataset"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `pan1` without a privacy-classifier term, `pan2` with one.
pub fn pan_method(train: &TrainingConfig) -> &'static str {
    if train.lambda3 > 0.0 {
        "pan2"
    } else {
        "pan1"
    }
}

fn lambdas(train: &TrainingConfig) -> [f64; 3] {
    [
        widen(train.lambda1),
        widen(train.lambda2),
        widen(train.lambda3),
    ]
}

/// Trains a fresh attacker ensemble on already-transformed samples and
/// scores it. `mirror_source` supplies the mirror reconstructor; without
/// it the features must have the image shape.
pub fn evaluate_features(
    cfg: &RunConfig,
    method: &str,
    lambda: [f64; 3],
    mirror_source: Option<&Model>,
    train: &Split,
    test: &Split,
    images: (&Tensor, &Tensor),
) -> Result<TradeoffPoint> {
    let ens = attack::train_attackers(
        mirror_source,
        train,
        test,
        images.0,
        images.1,
        &cfg.attack(),
    )?;
    TradeoffPoint::from_ensemble(
        method,
        lambda,
        &ens,
        cfg.eval.score_weights,
        cfg.eval.score_sign,
    )
}

/// Encodes both splits with the frozen `encoder` and evaluates the
/// features.
pub fn evaluate_encoder(
    cfg: &RunConfig,
    dataset: &Dataset,
    encoder: &Model,
    method: &str,
    lambda: [f64; 3],
) -> Result<TradeoffPoint> {
    let (train, test) = (dataset.train(), dataset.test());
    let ftrain = attack::encode_split(encoder, &train)?;
    let ftest = attack::encode_split(encoder, &test)?;
    evaluate_features(
        cfg,
        method,
        lambda,
        Some(encoder),
        &ftrain,
        &ftest,
        (&train.x, &test.x),
    )
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub models: PanModels,
    pub history: TrainingHistory,
    pub files: Vec<PathBuf>,
}

/// Trains E, UD, PD (when λ3 > 0) and PR; writes one model file each plus
/// the loss history.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainArtifacts> {
    let dataset = load_dataset(cfg)?;
    let (models, history) =
        trainer::train_pan_with(&dataset, &cfg.training(), &cfg.model, on_epoch)?;
    ensure_dir(&cfg.output_dir)?;
    let mut files = Vec::new();
    for m in [&models.encoder, &models.ud, &models.pr]
        .into_iter()
        .chain(models.pd.as_ref())
    {
        let path = cfg.output_dir.join(format!("{}.panw", m.name()));
        ModelFile::from_model(m).save(&path)?;
        files.push(path);
    }
    let path = cfg.output_dir.join(HISTORY_FILE);
    std::fs::write(&path, history.to_csv())?;
    files.push(path);
    Ok(TrainArtifacts {
        models,
        history,
        files,
    })
}

/// Rebuilds the configured encoder for `input_shape` and loads its
/// weights from `path`.
pub fn load_encoder(cfg: &RunConfig, input_shape: &[usize], path: &Path) -> Result<Model> {
    let mut encoder = zoo::build_encoder(input_shape, &cfg.model.encoder, 0)?;
    ModelFile::load(path)?.restore(&mut encoder)?;
    encoder.set_training(false);
    Ok(encoder)
}

/// Attackers against the encoder stored at `encoder_path`; writes
/// `evaluate.csv` with one row.
pub fn cmd_evaluate(cfg: &RunConfig, encoder_path: &Path) -> Result<TradeoffPoint> {
    let dataset = load_dataset(cfg)?;
    let encoder = load_encoder(cfg, dataset.sample_shape(), encoder_path)?;
    let point = evaluate_encoder(
        cfg,
        &dataset,
        &encoder,
        pan_method(&cfg.train),
        lambdas(&cfg.train),
    )?;
    ensure_dir(&cfg.output_dir)?;
    report::write_csv(
        &cfg.output_dir.join("evaluate.csv"),
        std::slice::from_ref(&point),
    )?;
    Ok(point)
}

#[derive(Debug)]
pub struct SweepResult {
    pub points: Vec<TradeoffPoint>,
    pub pareto: Vec<TradeoffPoint>,
}

/// Train and evaluate at every grid point in grid order; writes
/// `sweep.csv` and `pareto.csv`.
pub fn cmd_sweep(cfg: &RunConfig, mut on_point: impl FnMut(&TradeoffPoint)) -> Result<SweepResult> {
    let dataset = load_dataset(cfg)?;
    let grid = cfg.sweep_grid()?;
    let mut points = Vec::with_capacity(grid.len());
    for [l1, l2, l3] in grid {
        let train = TrainingConfig {
            lambda1: l1,
            lambda2: l2,
            lambda3: l3,
            epochs: cfg.sweep.epochs.unwrap_or(cfg.train.epochs),
            ..cfg.training()
        };
        let (models, _) = trainer::train_pan(&dataset, &train, &cfg.model)?;
        let p = evaluate_encoder(
            cfg,
            &dataset,
            &models.encoder,
            pan_method(&train),
            lambdas(&train),
        )?;
        on_point(&p);
        points.push(p);
    }
    let pareto = attack::pareto_front(&points);
    ensure_dir(&cfg.output_dir)?;
    report::write_csv(&cfg.output_dir.join("sweep.csv"), &points)?;
    report::write_csv(&cfg.output_dir.join("pareto.csv"), &pareto)?;
    Ok(SweepResult { points, pareto })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Dp,
    Fl,
    Dnn,
    Hybrid,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Dp => "dp",
            Baseline::Fl => "fl",
            Baseline::Dnn => "dnn",
            Baseline::Hybrid => "hybrid",
        }
    }
}

/// Runs one baseline over its parameter grid; writes
/// `baseline_<name>.csv`.
pub fn cmd_baseline(
    cfg: &RunConfig,
    which: Baseline,
    mut on_point: impl FnMut(&TradeoffPoint),
) -> Result<Vec<TradeoffPoint>> {
    let dataset = load_dataset(cfg)?;
    let (train, test) = (dataset.train(), dataset.test());
    let images = (&train.x, &test.x);
    let mut points = Vec::new();
    let mut push = |p: TradeoffPoint| {
        on_point(&p);
        points.push(p);
    };
    let seed = |tag: &str| derive_seed(cfg.seed, tag);
    match which {
        Baseline::Dp => {
            for &b in &cfg.baseline.dp_factors {
                let tr = train.with_x(baselines::dp_laplace(
                    &train.x,
                    b,
                    seed(&format!("dp/{b}/train")),
                )?)?;
                let te = test.with_x(baselines::dp_laplace(
                    &test.x,
                    b,
                    seed(&format!("dp/{b}/test")),
                )?)?;
                push(evaluate_features(
                    cfg,
                    &format!("dp(b={b})"),
                    [0.0; 3],
                    None,
                    &tr,
                    &te,
                    images,
                )?);
            }
        }
        Baseline::Fl => {
            let (s, r) = (cfg.baseline.fl_sigma, cfg.baseline.fl_range);
            let tr = train.with_x(baselines::fl_gaussian(&train.x, s, r, seed("fl/train"))?)?;
            let te = test.with_x(baselines::fl_gaussian(&test.x, s, r, seed("fl/test"))?)?;
            push(evaluate_features(
                cfg,
                &format!("fl(sigma={s})"),
                [0.0; 3],
                None,
                &tr,
                &te,
                images,
            )?);
        }
        Baseline::Dnn | Baseline::Hybrid => {
            let tc = cfg.training();
            let (models, _) = baselines::train_plain_dnn(&dataset, &tc, &cfg.model)?;
            let enc = &models.encoder;
            let lambda = [widen(tc.lambda1), 0.0, 0.0];
            if which == Baseline::Dnn {
                push(evaluate_encoder(cfg, &dataset, enc, "dnn", lambda)?);
            } else {
                let ftrain = attack::encode_split(enc, &train)?;
                let ftest = attack::encode_split(enc, &test)?;
                for &d in &cfg.baseline.hybrid_dims {
                    let basis = baselines::fit_pca(&ftrain.x, d)?;
                    for &b in &cfg.baseline.hybrid_factors {
                        let tag = format!("hybrid/{d}/{b}");
                        let tr = ftrain.with_x(baselines::hybrid_transform(
                            &ftrain.x,
                            &basis,
                            b,
                            seed(&format!("{tag}/train")),
                        )?)?;
                        let te = ftest.with_x(baselines::hybrid_transform(
                            &ftest.x,
                            &basis,
                            b,
                            seed(&format!("{tag}/test")),
                        )?)?;
                        let label = format!("hybrid(d={d} b={b})");
                        push(evaluate_features(
                            cfg,
                            &label,
                            lambda,
                            Some(enc),
                            &tr,
                            &te,
                            images,
                        )?);
                    }
                }
            }
        }
    }
    ensure_dir(&cfg.output_dir)?;
    report::write_csv(
        &cfg.output_dir
            .join(format!("baseline_{}.csv", which.name())),
        &points,
    )?;
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct EncodeSummary {
    pub samples: usize,
    pub feature_shape: Vec<usize>,
    pub seconds_per_sample: f64,
    pub path: PathBuf,
}

/// Encodes the images in `input` (an IDX image file), or the configured
/// test split when `input` is `None`; writes `features.panw`.
pub fn cmd_encode(
    cfg: &RunConfig,
    encoder_path: &Path,
    input: Option<&Path>,
) -> Result<EncodeSummary> {
    let x = match input {
        Some(p) => data::read_idx_images(p)?,
        None => load_dataset(cfg)?.test().x,
    };
    if x.rank() < 2 {
        return Err(PanError::Shape(format!(
            "input samples must be batched, got {:?}",
            x.shape()
        )));
    }
    let encoder = load_encoder(cfg, &x.shape()[1..], encoder_path)?;
    let start = Instant::now();
    let features = encoder.predict(&x, 256)?;
    let seconds = start.elapsed().as_secs_f64();
    let samples = x.batch();
    let feature_shape = features.shape()[1..].to_vec();
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(FEATURES_FILE);
    let mut tensors = BTreeMap::new();
    tensors.insert("features".to_string(), features);
    ModelFile {
        name: "features".into(),
        tensors,
    }
    .save(&path)?;
    Ok(EncodeSummary {
        samples,
        feature_shape,
        seconds_per_sample: seconds / samples.max(1) as f64,
        path,
    })
}

pub fn cmd_gradcheck(seed: u64) -> Result<GradcheckReport> {
    gradcheck::run(&GradcheckOptions {
        seed,
        ..GradcheckOptions::default()
    })
}
