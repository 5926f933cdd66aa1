//! Third-party evaluation of a frozen encoding.
//!
//! Attackers never see encoder gradients: features are computed once in
//! inference mode, then independent classifiers and reconstructors are
//! trained on (feature, label) and (feature, image) pairs. Utility is the
//! best classifier's accuracy, p1 the best privacy classifier's accuracy,
//! p2 the lowest reconstruction error among the reconstructors.

use crate::adam::AdamState;
use crate::data::Split;
use crate::error::{PanError, Result};
use crate::model::zoo::{self, ReconstructorPreset};
use crate::model::Model;
use crate::par;
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::ReconstructorChoice;

/// Samples per chunk when running frozen models.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    /// hidden widths of each utility / privacy classifier candidate
    pub ud_hidden: Vec<Vec<usize>>,
    pub pd_hidden: Vec<Vec<usize>>,
    pub reconstructors: Vec<ReconstructorChoice>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 1e-3,
            batch_size: 64,
            ud_hidden: vec![vec![64], vec![256]],
            pd_hidden: vec![vec![64], vec![256]],
            reconstructors: vec![
                ReconstructorChoice::Preset(ReconstructorPreset::Generic),
                ReconstructorChoice::Mirror,
            ],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Utility,
    Privacy,
    Reconstructor,
}

#[derive(Debug, Clone)]
pub struct Member {
    pub role: Role,
    pub label: String,
    pub model: Model,
    /// test accuracy in percent for classifiers, test MSE for reconstructors
    pub metric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AttackerEnsemble {
    pub members: Vec<Member>,
}

impl AttackerEnsemble {
    fn metrics(&self, role: Role) -> impl Iterator<Item = f64> + '_ {
        self.members
            .iter()
            .filter(move |m| m.role == role)
            .map(|m| m.metric)
    }

    /// Best utility accuracy (%).
    pub fn utility(&self) -> Option<f64> {
        self.metrics(Role::Utility).reduce(f64::max)
    }

    /// Best privacy-attribute accuracy (%); `None` without privacy labels.
    pub fn p1(&self) -> Option<f64> {
        self.metrics(Role::Privacy).reduce(f64::max)
    }

    /// Lowest reconstruction error.
    pub fn p2(&self) -> Option<f64> {
        self.metrics(Role::Reconstructor).reduce(f64::min)
    }
}

/// `log10(1 + p2)`.
pub fn log_normalize(p2: f64) -> f64 {
    p2.ln_1p() / std::f64::consts::LN_10
}

/// Features of every sample of `split` from a frozen encoder in inference
/// mode. The encoder itself is not modified.
pub fn encode_split(encoder: &Model, split: &Split) -> Result<Split> {
    let mut frozen = encoder.clone();
    frozen.set_training(false);
    split.with_x(frozen.predict(&split.x, EVAL_CHUNK)?)
}

/// Top-1 accuracy in percent.
pub fn accuracy(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(PanError::Contract("accuracy over an empty split".into()));
    }
    let probs = model.predict(x, EVAL_CHUNK)?;
    let classes = probs.per_sample();
    let hits = probs
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean squared reconstruction error over `features` against `targets`.
pub fn reconstruction_error(model: &Model, features: &Tensor, targets: &Tensor) -> Result<f64> {
    let rec = model.predict(features, EVAL_CHUNK)?;
    if rec.shape() != targets.shape() {
        return Err(PanError::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            rec.shape(),
            targets.shape()
        )));
    }
    let sq: f64 = rec
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum();
    Ok(sq / targets.len().max(1) as f64)
}

/// Trains a classifier with cross-entropy and Adam on `x` / `labels`.
pub fn fit_classifier(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<()> {
    let split = Split::new(x.clone(), labels.to_vec(), None)?;
    let mut adam = AdamState::default();
    for epoch in 0..cfg.epochs {
        for b in split.batches(cfg.batch_size, seed, epoch)? {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true)?;
            let xv = tape.constant(b.x);
            let out = model.forward(&mut tape, &bound, xv)?;
            let loss = tape.cross_entropy(out.out, &b.y)?;
            if !tape.value(loss).all_finite() {
                return Err(PanError::NonFinite {
                    stage: "attacker-classifier",
                    epoch,
                });
            }
            let grads = tape.backward(loss)?;
            adam.step(model.params_mut(), &grads, cfg.lr)?;
            model.commit_stats(&out.batch_stats);
        }
    }
    model.set_training(false);
    Ok(())
}

/// Trains a reconstructor on MSE against `targets`.
pub fn fit_reconstructor(
    model: &mut Model,
    features: &Tensor,
    targets: &Tensor,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<()> {
    let n = features.batch();
    let mut adam = AdamState::default();
    for epoch in 0..cfg.epochs {
        let order = crate::data::epoch_order(n, seed, epoch);
        for idx in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true)?;
            let f = tape.constant(features.gather_rows(idx)?);
            let t = tape.constant(targets.gather_rows(idx)?);
            let out = model.forward(&mut tape, &bound, f)?;
            let loss = tape.mse(out.out, t)?;
            if !tape.value(loss).all_finite() {
                return Err(PanError::NonFinite {
                    stage: "attacker-reconstructor",
                    epoch,
                });
            }
            let grads = tape.backward(loss)?;
            adam.step(model.params_mut(), &grads, cfg.lr)?;
            model.commit_stats(&out.batch_stats);
        }
    }
    model.set_training(false);
    Ok(())
}

fn hidden_label(prefix: &str, h: &[usize]) -> String {
    let widths: Vec<String> = h.iter().map(usize::to_string).collect();
    format!("{prefix}[{}]", widths.join(","))
}

/// What one ensemble member is, before training.
enum Spec<'a> {
    Classifier { role: Role, hidden: &'a [usize] },
    Reconstructor(ReconstructorChoice),
}

/// Trains every candidate attacker on precomputed features.
///
/// `train`/`test` hold features with their labels; `train_images` /
/// `test_images` are the raw inputs the reconstructors aim for.
/// `mirror_source` is the encoder whose mirror is used for the
/// [`ReconstructorChoice::Mirror`] candidate; without it the features must
/// already have the image shape and the mirror is the identity stack.
/// Privacy classifiers are skipped when the labels carry no `z`.
pub fn train_attackers(
    mirror_source: Option<&Model>,
    train: &Split,
    test: &Split,
    train_images: &Tensor,
    test_images: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackerEnsemble> {
    if cfg.ud_hidden.is_empty() || cfg.reconstructors.is_empty() {
        return Err(PanError::Config(
            "attacker ensemble needs classifiers and reconstructors".into(),
        ));
    }
    let feat_shape = train.sample_shape().to_vec();
    let image_shape = train_images.shape()[1..].to_vec();
    let mut specs: Vec<Spec> = cfg
        .ud_hidden
        .iter()
        .map(|h| Spec::Classifier {
            role: Role::Utility,
            hidden: h,
        })
        .collect();
    if train.z.is_some() && test.z.is_some() {
        specs.extend(cfg.pd_hidden.iter().map(|h| Spec::Classifier {
            role: Role::Privacy,
            hidden: h,
        }));
    }
    specs.extend(cfg.reconstructors.iter().map(|&r| Spec::Reconstructor(r)));

    let y_classes = train.y.iter().chain(&test.y).max().map_or(1, |m| m + 1);
    let z_classes = train
        .z
        .iter()
        .chain(&test.z)
        .flatten()
        .max()
        .map_or(1, |m| m + 1);

    let results = par::map_slice(&specs, |spec| -> Result<Member> {
        match *spec {
            Spec::Classifier { role, hidden } => {
                let (prefix, classes, tr, te) = match role {
                    Role::Utility => ("ud", y_classes, &train.y, &test.y),
                    _ => (
                        "pd",
                        z_classes,
                        train.z.as_ref().expect("checked"),
                        test.z.as_ref().expect("checked"),
                    ),
                };
                let label = hidden_label(prefix, hidden);
                let seed = rng::derive_seed(cfg.seed, &label);
                let mut model =
                    zoo::build_mlp_classifier(prefix, &feat_shape, classes, hidden, seed)?;
                fit_classifier(&mut model, &train.x, tr, cfg, seed)?;
                let metric = accuracy(&model, &test.x, te)?;
                Ok(Member {
                    role,
                    label,
                    model,
                    metric,
                })
            }
            Spec::Reconstructor(choice) => {
                let label = format!("pr:{choice}");
                let seed = rng::derive_seed(cfg.seed, &label);
                let mut model = match (choice, mirror_source) {
                    (ReconstructorChoice::Mirror, Some(enc)) => zoo::mirror_of(enc, "pr", seed)?,
                    (ReconstructorChoice::Mirror, None) => {
                        if feat_shape != image_shape {
                            return Err(PanError::Config(
                                "mirror reconstructor needs the encoder".into(),
                            ));
                        }
                        Model::new("pr", &feat_shape, vec![], seed)?
                    }
                    (ReconstructorChoice::Preset(p), _) => {
                        zoo::build_reconstructor("pr", &feat_shape, &image_shape, p, seed)?
                    }
                };
                fit_reconstructor(&mut model, &train.x, train_images, cfg, seed)?;
                let metric = reconstruction_error(&model, &test.x, test_images)?;
                Ok(Member {
                    role: Role::Reconstructor,
                    label,
                    model,
                    metric,
                })
            }
        }
    });
    Ok(AttackerEnsemble {
        members: results.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Sign applied to the `log_p2` term of the tradeoff score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSign {
    Plus,
    Minus,
}

impl ScoreSign {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSign::Plus => "+",
            ScoreSign::Minus => "-",
        }
    }
}

impl std::str::FromStr for ScoreSign {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" => Ok(ScoreSign::Plus),
            "-" | "minus" => Ok(ScoreSign::Minus),
            other => Err(PanError::Config(format!(
                "score sign must be + or -, got `{other}`"
            ))),
        }
    }
}

/// `w1·u + w2·(100 − p1) ± w3·log_p2`; the p1 term is dropped when absent.
pub fn tradeoff_score(
    u: f64,
    p1: Option<f64>,
    log_p2: f64,
    weights: [f64; 3],
    sign: ScoreSign,
) -> f64 {
    let s = match sign {
        ScoreSign::Plus => 1.0,
        ScoreSign::Minus => -1.0,
    };
    weights[0] * u + p1.map_or(0.0, |p| weights[1] * (100.0 - p)) + s * weights[2] * log_p2
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub method: String,
    pub lambda: [f64; 3],
    pub u: f64,
    pub p1: Option<f64>,
    pub p2: f64,
    pub log_p2: f64,
    pub score: f64,
}

impl TradeoffPoint {
    pub fn new(
        method: impl Into<String>,
        lambda: [f64; 3],
        u: f64,
        p1: Option<f64>,
        p2: f64,
        score_weights: [f64; 3],
        sign: ScoreSign,
    ) -> Self {
        let log_p2 = log_normalize(p2);
        let score = tradeoff_score(u, p1, log_p2, score_weights, sign);
        Self {
            method: method.into(),
            lambda,
            u,
            p1,
            p2,
            log_p2,
            score,
        }
    }

    pub fn from_ensemble(
        method: impl Into<String>,
        lambda: [f64; 3],
        ensemble: &AttackerEnsemble,
        score_weights: [f64; 3],
        sign: ScoreSign,
    ) -> Result<Self> {
        let u = ensemble
            .utility()
            .ok_or_else(|| PanError::Contract("no utility classifier".into()))?;
        let p2 = ensemble
            .p2()
            .ok_or_else(|| PanError::Contract("no reconstructor".into()))?;
        Ok(Self::new(
            method,
            lambda,
            u,
            ensemble.p1(),
            p2,
            score_weights,
            sign,
        ))
    }

    /// Objectives to maximize.
    fn objectives(&self, with_p1: bool) -> Vec<f64> {
        let mut v = vec![self.u];
        if with_p1 {
            v.push(100.0 - self.p1.unwrap_or(100.0));
        }
        v.push(self.log_p2);
        v
    }
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Indices (ascending) of the points no other point dominates in
/// `(u, 100 − p1, log_p2)`. The p1 objective is used only when every point
/// has a p1.
pub fn pareto_indices(points: &[TradeoffPoint]) -> Vec<usize> {
    let with_p1 = points.iter().all(|p| p.p1.is_some());
    let obj: Vec<Vec<f64>> = points.iter().map(|p| p.objectives(with_p1)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    // a dominator always sorts before what it dominates
    order.sort_by(|&i, &j| {
        obj[j]
            .partial_cmp(&obj[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| dominates(&obj[f], &obj[i])) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    pareto_indices(points)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(u: f64, p1: Option<f64>, log_p2: f64) -> TradeoffPoint {
        TradeoffPoint {
            method: "t".into(),
            lambda: [0.0; 3],
            u,
            p1,
            p2: 0.0,
            log_p2,
            score: 0.0,
        }
    }

    #[test]
    fn score_on_reference_values() {
        let s = tradeoff_score(99.1, Some(23.1), 0.163, [0.4, 0.3, 0.3], ScoreSign::Plus);
        assert!((s - 62.7589).abs() < 1e-9);
        let minus = tradeoff_score(99.1, Some(23.1), 0.163, [0.4, 0.3, 0.3], ScoreSign::Minus);
        assert!((minus - (0.4 * 99.1 + 0.3 * 76.9 - 0.3 * 0.163)).abs() < 1e-9);
        assert_eq!(
            tradeoff_score(80.0, Some(50.0), 1.0, [0.5, 0.0, 0.0], ScoreSign::Plus),
            40.0
        );
        assert_eq!(
            tradeoff_score(80.0, None, 1.0, [0.5, 0.3, 0.0], ScoreSign::Plus),
            40.0
        );
    }

    #[test]
    fn log_normalization() {
        assert_eq!(log_normalize(0.0), 0.0);
        assert!((log_normalize(9.0) - 1.0).abs() < 1e-12);
        assert!(log_normalize(0.2) > log_normalize(0.1));
    }

    #[test]
    fn pareto_small_cases() {
        assert_eq!(pareto_indices(&[pt(1.0, None, 1.0)]), vec![0]);
        assert_eq!(
            pareto_indices(&[pt(90.0, None, 0.1), pt(80.0, None, 0.05)]),
            vec![0]
        );
        assert_eq!(
            pareto_indices(&[pt(80.0, None, 0.2), pt(90.0, None, 0.1)]),
            vec![0, 1]
        );
        // equal points do not dominate each other
        assert_eq!(
            pareto_indices(&[pt(1.0, Some(2.0), 3.0), pt(1.0, Some(2.0), 3.0)]),
            vec![0, 1]
        );
        // lower p1 is better
        assert_eq!(
            pareto_indices(&[pt(90.0, Some(30.0), 0.1), pt(90.0, Some(60.0), 0.1)]),
            vec![0]
        );
        // one missing p1 drops that objective for everyone
        assert_eq!(
            pareto_indices(&[
                pt(90.0, Some(30.0), 0.1),
                pt(90.0, None, 0.1),
                pt(90.0, Some(20.0), 0.1)
            ]),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn ensemble_min_max_semantics() {
        let m = Model::new("m", &[1], vec![], 0).unwrap();
        let member = |role, metric| Member {
            role,
            label: String::new(),
            model: m.clone(),
            metric,
        };
        let mut e = AttackerEnsemble {
            members: vec![
                member(Role::Utility, 80.0),
                member(Role::Reconstructor, 0.3),
                member(Role::Privacy, 40.0),
            ],
        };
        assert_eq!(
            (e.utility(), e.p1(), e.p2()),
            (Some(80.0), Some(40.0), Some(0.3))
        );
        e.members.push(member(Role::Reconstructor, 0.5));
        e.members.push(member(Role::Privacy, 30.0));
        assert_eq!((e.p1(), e.p2()), (Some(40.0), Some(0.3)));
        e.members.push(member(Role::Reconstructor, 0.1));
        assert_eq!(e.p2(), Some(0.1));
    }
}
