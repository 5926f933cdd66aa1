use crate::error::{PanError, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Laplace,
    Gaussian,
}

/// Additive noise on the [0,1] pixel scale; `scale` is the Laplace `b` or
/// the Gaussian standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub mechanism: Mechanism,
    pub scale: f32,
    pub seed: u64,
}

/// `data + noise`, not clipped.
pub fn perturb(data: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    if !(spec.scale >= 0.0) || !spec.scale.is_finite() {
        return Err(PanError::Config(format!(
            "noise scale must be non-negative, got {}",
            spec.scale
        )));
    }
    let mut r = rng::rng(rng::derive_seed(spec.seed, "noise"));
    let draw: fn(&mut rng::PanRng, f32) -> f32 = match spec.mechanism {
        Mechanism::Laplace => |r, s| rng::laplace(r, s),
        Mechanism::Gaussian => |r, s| rng::gaussian(r, s),
    };
    let mut out = data.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v += draw(&mut r, spec.scale));
    Ok(out)
}

/// Laplace(0, b) per element; expected squared perturbation 2b².
pub fn dp_laplace(data: &Tensor, b: f32, seed: u64) -> Result<Tensor> {
    perturb(
        data,
        &NoiseSpec {
            mechanism: Mechanism::Laplace,
            scale: b,
            seed,
        },
    )
}

/// Gaussian with standard deviation `sigma / range` (e.g. 40 on a 0-255
/// scale); expected squared perturbation `(sigma/range)²`.
pub fn fl_gaussian(data: &Tensor, sigma: f32, range: f32, seed: u64) -> Result<Tensor> {
    if !(range > 0.0) {
        return Err(PanError::Config(format!(
            "noise range must be positive, got {range}"
        )));
    }
    perturb(
        data,
        &NoiseSpec {
            mechanism: Mechanism::Gaussian,
            scale: sigma / range,
            seed,
        },
    )
}
