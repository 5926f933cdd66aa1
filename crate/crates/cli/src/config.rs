//! `key = value` run configuration with dotted keys.
//!
//! Lines are trimmed; blank lines and lines starting with `#` are skipped.
//! Every key is optional (defaults below), unknown or repeated keys are
//! errors. [`RunConfig::to_text`] writes every key, so parsing its output
//! gives back an equal config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pan_core::attack::{AttackConfig, ScoreSign};
use pan_core::model::zoo::EncoderPreset;
use pan_core::trainer::{Architecture, ReconstructorChoice, TrainingConfig};
use pan_core::{PanError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub train_size: usize,
    pub test_size: usize,
}

/// How the sweep picks λ2 for each λ1.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda2Rule {
    /// `1 − λ1`
    Complement,
    Values(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambda1: Vec<f32>,
    pub lambda2: Lambda2Rule,
    pub lambda3: f32,
    /// training epochs per grid point; `None` uses `train.epochs`
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub dp_factors: Vec<f32>,
    pub fl_sigma: f32,
    pub fl_range: f32,
    pub hybrid_dims: Vec<usize>,
    pub hybrid_factors: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub attack: AttackConfig,
    pub score_weights: [f64; 3],
    pub score_sign: ScoreSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: Architecture,
    pub train: TrainingConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub baseline: BaselineConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig {
                kind: DatasetKind::Mnist,
                images: PathBuf::from("data/mnist-desk/images-idx3-ubyte"),
                labels: PathBuf::from("data/mnist-desk/labels-idx1-ubyte"),
                train_size: 5000,
                test_size: 1000,
            },
            model: Architecture::default(),
            train: TrainingConfig::default(),
            eval: EvalConfig {
                attack: AttackConfig::default(),
                score_weights: [0.4, 0.3, 0.3],
                score_sign: ScoreSign::Plus,
            },
            sweep: SweepConfig {
                lambda1: vec![0.1, 0.3, 0.5, 0.7, 0.9],
                lambda2: Lambda2Rule::Complement,
                lambda3: 0.0,
                epochs: None,
            },
            baseline: BaselineConfig {
                dp_factors: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
                fl_sigma: 40.0,
                fl_range: 255.0,
                hybrid_dims: vec![8, 32],
                hybrid_factors: vec![0.5, 1.0],
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

/// Candidates separated by `;`, widths within one candidate by `,`.
fn nested(v: &[Vec<usize>]) -> String {
    v.iter().map(|h| list(h)).collect::<Vec<_>>().join(";")
}

fn parse_nested(key: &str, v: &str) -> Result<Vec<Vec<usize>>> {
    v.split(';').map(|s| parse_list(key, s.trim())).collect()
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| PanError::Config(format!("invalid value `{v}` for key `{key}`")))
}

const KEYS: &[&str] = &[
    "seed",
    "dataset.kind",
    "dataset.images",
    "dataset.labels",
    "dataset.train_size",
    "dataset.test_size",
    "model.encoder",
    "model.ud_hidden",
    "model.pd_hidden",
    "model.reconstructor",
    "train.lambda1",
    "train.lambda2",
    "train.lambda3",
    "train.k",
    "train.epochs",
    "train.batch_size",
    "train.lr1",
    "train.lr2",
    "train.lr3",
    "train.lr4",
    "eval.epochs",
    "eval.lr",
    "eval.batch_size",
    "eval.ud_hidden",
    "eval.pd_hidden",
    "eval.reconstructors",
    "eval.score_weights",
    "eval.score_sign",
    "sweep.lambda1",
    "sweep.lambda2",
    "sweep.lambda3",
    "sweep.epochs",
    "baseline.dp_factors",
    "baseline.fl_sigma",
    "baseline.fl_range",
    "baseline.hybrid_dims",
    "baseline.hybrid_factors",
    "output.dir",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PanError::Config(format!(
                    "line {}: expected key=value",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(PanError::Config(format!("key `{key}` given twice")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = |v: &str| -> Result<f32> { parse_value(key, v) };
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "dataset.kind" => {
                self.dataset.kind = match v {
                    "mnist" => DatasetKind::Mnist,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => {
                        return Err(PanError::Config(format!(
                            "invalid value `{v}` for key `{key}`"
                        )))
                    }
                }
            }
            "dataset.images" => self.dataset.images = PathBuf::from(v),
            "dataset.labels" => self.dataset.labels = PathBuf::from(v),
            "dataset.train_size" => self.dataset.train_size = parse_value(key, v)?,
            "dataset.test_size" => self.dataset.test_size = parse_value(key, v)?,
            "model.encoder" => self.model.encoder = EncoderPreset::from_str(v)?,
            "model.ud_hidden" => self.model.ud_hidden = parse_list(key, v)?,
            "model.pd_hidden" => self.model.pd_hidden = parse_list(key, v)?,
            "model.reconstructor" => self.model.reconstructor = v.parse()?,
            "train.lambda1" => self.train.lambda1 = p(v)?,
            "train.lambda2" => self.train.lambda2 = p(v)?,
            "train.lambda3" => self.train.lambda3 = p(v)?,
            "train.k" => self.train.k = parse_value(key, v)?,
            "train.epochs" => self.train.epochs = parse_value(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, v)?,
            "train.lr1" => self.train.lr[0] = p(v)?,
            "train.lr2" => self.train.lr[1] = p(v)?,
            "train.lr3" => self.train.lr[2] = p(v)?,
            "train.lr4" => self.train.lr[3] = p(v)?,
            "eval.epochs" => self.eval.attack.epochs = parse_value(key, v)?,
            "eval.lr" => self.eval.attack.lr = p(v)?,
            "eval.batch_size" => self.eval.attack.batch_size = parse_value(key, v)?,
            "eval.ud_hidden" => self.eval.attack.ud_hidden = parse_nested(key, v)?,
            "eval.pd_hidden" => self.eval.attack.pd_hidden = parse_nested(key, v)?,
            "eval.reconstructors" => {
                self.eval.attack.reconstructors = v
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<Vec<ReconstructorChoice>>>()?
            }
            "eval.score_weights" => {
                let w: Vec<f64> = parse_list(key, v)?;
                self.eval.score_weights = w
                    .try_into()
                    .map_err(|_| PanError::Config(format!("`{key}` needs exactly three values")))?;
            }
            "eval.score_sign" => self.eval.score_sign = v.parse()?,
            "sweep.lambda1" => self.sweep.lambda1 = parse_list(key, v)?,
            "sweep.lambda2" => {
                self.sweep.lambda2 = match v {
                    "complement" => Lambda2Rule::Complement,
                    _ => Lambda2Rule::Values(parse_list(key, v)?),
                }
            }
            "sweep.lambda3" => self.sweep.lambda3 = p(v)?,
            "sweep.epochs" => {
                self.sweep.epochs = if v == "train" {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            "baseline.dp_factors" => self.baseline.dp_factors = parse_list(key, v)?,
            "baseline.fl_sigma" => self.baseline.fl_sigma = p(v)?,
            "baseline.fl_range" => self.baseline.fl_range = p(v)?,
            "baseline.hybrid_dims" => self.baseline.hybrid_dims = parse_list(key, v)?,
            "baseline.hybrid_factors" => self.baseline.hybrid_factors = parse_list(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(PanError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        let a = &self.eval.attack;
        match key {
            "seed" => self.seed.to_string(),
            "dataset.kind" => match self.dataset.kind {
                DatasetKind::Mnist => "mnist".into(),
                DatasetKind::Synthetic => "synthetic".into(),
            },
            "dataset.images" => self.dataset.images.display().to_string(),
            "dataset.labels" => self.dataset.labels.display().to_string(),
            "dataset.train_size" => self.dataset.train_size.to_string(),
            "dataset.test_size" => self.dataset.test_size.to_string(),
            "model.encoder" => self.model.encoder.to_string(),
            "model.ud_hidden" => list(&self.model.ud_hidden),
            "model.pd_hidden" => list(&self.model.pd_hidden),
            "model.reconstructor" => self.model.reconstructor.to_string(),
            "train.lambda1" => t.lambda1.to_string(),
            "train.lambda2" => t.lambda2.to_string(),
            "train.lambda3" => t.lambda3.to_string(),
            "train.k" => t.k.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr1" => t.lr[0].to_string(),
            "train.lr2" => t.lr[1].to_string(),
            "train.lr3" => t.lr[2].to_string(),
            "train.lr4" => t.lr[3].to_string(),
            "eval.epochs" => a.epochs.to_string(),
            "eval.lr" => a.lr.to_string(),
            "eval.batch_size" => a.batch_size.to_string(),
            "eval.ud_hidden" => nested(&a.ud_hidden),
            "eval.pd_hidden" => nested(&a.pd_hidden),
            "eval.reconstructors" => list(&a.reconstructors),
            "eval.score_weights" => list(&self.eval.score_weights),
            "eval.score_sign" => self.eval.score_sign.as_str().into(),
            "sweep.lambda1" => list(&self.sweep.lambda1),
            "sweep.lambda2" => match &self.sweep.lambda2 {
                Lambda2Rule::Complement => "complement".into(),
                Lambda2Rule::Values(v) => list(v),
            },
            "sweep.lambda3" => self.sweep.lambda3.to_string(),
            "sweep.epochs" => self.sweep.epochs.map_or("train".into(), |e| e.to_string()),
            "baseline.dp_factors" => list(&self.baseline.dp_factors),
            "baseline.fl_sigma" => self.baseline.fl_sigma.to_string(),
            "baseline.fl_range" => self.baseline.fl_range.to_string(),
            "baseline.hybrid_dims" => list(&self.baseline.hybrid_dims),
            "baseline.hybrid_factors" => list(&self.baseline.hybrid_factors),
            "output.dir" => self.output_dir.display().to_string(),
            _ => unreachable!("key table and getter disagree on `{key}`"),
        }
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }

    /// Training settings with the run seed applied.
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Attacker settings with a seed derived from the run seed.
    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            seed: pan_core::rng::derive_seed(self.seed, "attackers"),
            ..self.eval.attack.clone()
        }
    }

    /// λ triples of the sweep grid, in order.
    pub fn sweep_grid(&self) -> Result<Vec<[f32; 3]>> {
        let l2 = match &self.sweep.lambda2 {
            Lambda2Rule::Complement => self.sweep.lambda1.iter().map(|l| 1.0 - l).collect(),
            Lambda2Rule::Values(v) if v.len() == self.sweep.lambda1.len() => v.clone(),
            Lambda2Rule::Values(_) => {
                return Err(PanError::Config(
                    "sweep.lambda2 needs one value per sweep.lambda1 entry".into(),
                ))
            }
        };
        Ok(self
            .sweep
            .lambda1
            .iter()
            .zip(l2)
            .map(|(&a, b)| [a, b, self.sweep.lambda3])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_is_a_fixpoint() {
        let text = RunConfig::default().to_text();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, RunConfig::default());
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse(
            "# run\n\ntrain.lambda1 = 0.3\nmodel.encoder=identity\neval.ud_hidden = ;64,32\n",
        )
        .unwrap();
        assert_eq!(c.train.lambda1, 0.3);
        assert_eq!(c.model.encoder, EncoderPreset::Identity);
        assert_eq!(c.eval.attack.ud_hidden, vec![vec![], vec![64, 32]]);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_and_repeated_keys() {
        let e = RunConfig::parse("train.lambda9 = 1")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.lambda9"), "{e}");
        assert!(RunConfig::parse("seed=1\nseed=2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("train.k = three").is_err());
    }

    #[test]
    fn sweep_grid_complement() {
        let g = RunConfig::default().sweep_grid().unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], [0.1, 0.9, 0.0]);
    }
}
