//! Comparison schemes: input noise (Laplace and Gaussian), plain supervised
//! features, and PCA-compressed features with Laplace noise.

mod noise;
mod pca;

pub use noise::{dp_laplace, fl_gaussian, perturb, Mechanism, NoiseSpec};
pub use pca::{fit_pca, hybrid_transform, PcaBasis};

use crate::data::Dataset;
use crate::error::Result;
use crate::trainer::{self, Architecture, PanModels, TrainingConfig, TrainingHistory};

/// Supervised encoder+UD training: the trainer with both privacy
/// multipliers set to zero.
pub fn train_plain_dnn(
    dataset: &Dataset,
    config: &TrainingConfig,
    arch: &Architecture,
) -> Result<(PanModels, TrainingHistory)> {
    let config = TrainingConfig {
        lambda2: 0.0,
        lambda3: 0.0,
        ..config.clone()
    };
    trainer::train_pan(dataset, &config, arch)
}
