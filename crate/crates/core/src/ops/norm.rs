//! Batch normalization over `[N, C]` or `[N, C, H, W]`, per channel.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Statistics consumed or produced by a batchnorm evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
    /// batch statistics were used (train mode)
    pub batch_stats: bool,
}

fn layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        ref s => shape_err(format!(
            "batchnorm input must be [N,C] or [N,C,H,W], got {s:?}"
        )),
    }
}

/// Normalizes with batch statistics (`running = None`) or with the given
/// running statistics. Returns output, cache, and the batch statistics
/// (unbiased variance) when computed.
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: Option<&BnStats>,
) -> Result<(Tensor, BnCache, Option<BnStats>)> {
    let (n, c, s) = layout(x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err(format!(
            "batchnorm affine params must be [{c}], got {:?} / {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    let m = n * s;
    if m == 0 {
        return shape_err("batchnorm on empty batch");
    }
    let xd = x.data();
    let at = |i: usize, ch: usize, j: usize| (i * c + ch) * s + j;

    let (mean, var, batch) = match running {
        Some(st) => {
            if st.mean.len() != c || st.var.len() != c {
                return shape_err("batchnorm running stats channel mismatch");
            }
            (st.mean.clone(), st.var.clone(), None)
        }
        None => {
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            let mut unbiased = vec![0.0f32; c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                for i in 0..n {
                    for j in 0..s {
                        sum += xd[at(i, ch, j)] as f64;
                    }
                }
                let mu = sum / m as f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    for j in 0..s {
                        let d = xd[at(i, ch, j)] as f64 - mu;
                        sq += d * d;
                    }
                }
                mean[ch] = mu as f32;
                var[ch] = (sq / m as f64) as f32;
                unbiased[ch] = if m > 1 {
                    (sq / (m - 1) as f64) as f32
                } else {
                    0.0
                };
            }
            (
                mean.clone(),
                var,
                Some(BnStats {
                    mean,
                    var: unbiased,
                }),
            )
        }
    };

    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    let (g, b) = (gamma.data(), beta.data());
    for i in 0..n {
        for ch in 0..c {
            for j in 0..s {
                let k = at(i, ch, j);
                let h = (xd[k] - mean[ch]) * inv_std[ch];
                xhat[k] = h;
                out[k] = g[ch] * h + b[ch];
            }
        }
    }
    let cache = BnCache {
        xhat: Tensor::new(x.shape().to_vec(), xhat)?,
        inv_std,
        batch_stats: running.is_none(),
    };
    Ok((Tensor::new(x.shape().to_vec(), out)?, cache, batch))
}

/// Gradients `(d_x, d_gamma, d_beta)`.
pub fn batchnorm_backward(
    gamma: &Tensor,
    cache: &BnCache,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, s) = layout(&cache.xhat).expect("cached layout");
    let m = (n * s) as f32;
    let at = |i: usize, ch: usize, j: usize| (i * c + ch) * s + j;
    let (dy, xh, g) = (grad_out.data(), cache.xhat.data(), gamma.data());
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ch in 0..c {
        let (mut sg, mut sb) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..s {
                let k = at(i, ch, j);
                sg += (dy[k] * xh[k]) as f64;
                sb += dy[k] as f64;
            }
        }
        dgamma[ch] = sg as f32;
        dbeta[ch] = sb as f32;
    }
    let mut dx = vec![0.0f32; dy.len()];
    for i in 0..n {
        for ch in 0..c {
            let scale = g[ch] * cache.inv_std[ch];
            for j in 0..s {
                let k = at(i, ch, j);
                dx[k] = if cache.batch_stats {
                    scale / m * (m * dy[k] - dbeta[ch] - xh[k] * dgamma[ch])
                } else {
                    scale * dy[k]
                };
            }
        }
    }
    let shape = cache.xhat.shape().to_vec();
    (
        Tensor::new(shape, dx).expect("bn dx"),
        Tensor::new(vec![c], dgamma).expect("bn dgamma"),
        Tensor::new(vec![c], dbeta).expect("bn dbeta"),
    )
}

/// Exponential moving update of running statistics.
pub fn update_running(running: &mut BnStats, batch: &BnStats) {
    for (r, b) in running.mean.iter_mut().zip(&batch.mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
    for (r, b) in running.var.iter_mut().zip(&batch.var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(c: usize) -> Tensor {
        Tensor::full(&[c], 1.0)
    }

    #[test]
    fn already_normalized_batch() {
        let x = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, _, _) = batchnorm(&x, &ones(1), &Tensor::zeros(&[1]), None).unwrap();
        let e = 1.0 / (1.0f32 + BN_EPS).sqrt();
        assert!((y.data()[0] + e).abs() < 1e-6 && (y.data()[1] - e).abs() < 1e-6);
    }

    #[test]
    fn constant_batch_gives_beta() {
        let x = Tensor::full(&[3, 2, 2, 2], 4.0);
        let beta = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let (y, _, _) = batchnorm(&x, &ones(2), &beta, None).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, if (i / 4) % 2 == 0 { 0.5 } else { -0.5 });
        }
        // batch of one, zero variance: finite
        let (y, _, _) = batchnorm(
            &Tensor::full(&[1, 2], 3.0),
            &ones(2),
            &Tensor::zeros(&[2]),
            None,
        )
        .unwrap();
        assert!(y.all_finite());
    }

    #[test]
    fn three_value_formula() {
        let x = Tensor::new(vec![3, 1], vec![0.0, 2.0, 4.0]).unwrap();
        let (y, _, stats) = batchnorm(&x, &ones(1), &Tensor::zeros(&[1]), None).unwrap();
        // mean 2, biased var 8/3
        let want = 2.0 / (8.0f64 / 3.0).sqrt();
        assert!((y.data()[0] as f64 + want).abs() < 1e-4);
        assert!(y.data()[1].abs() < 1e-6);
        assert!((y.data()[2] as f64 - 1.2247).abs() < 1e-4);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert!((stats.var[0] - 4.0).abs() < 1e-6); // unbiased 8/2
    }

    #[test]
    fn train_mode_normalizes_per_channel() {
        let x = Tensor::from_fn(&[4, 3, 2, 2], |i| {
            ((i * 31) % 11) as f32 * 0.7 + (i % 3) as f32
        });
        let (y, cache, _) = batchnorm(&x, &ones(3), &Tensor::zeros(&[3]), None).unwrap();
        assert!(cache.batch_stats);
        for ch in 0..3 {
            let vals: Vec<f32> = (0..4)
                .flat_map(|n| (0..4).map(move |j| (n * 3 + ch) * 4 + j))
                .map(|k| y.data()[k])
                .collect();
            let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
            let var: f32 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / vals.len() as f32;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let x = Tensor::new(vec![2, 1], vec![3.0, 5.0]).unwrap();
        let st = BnStats {
            mean: vec![1.0],
            var: vec![4.0],
        };
        let (y, _, batch) = batchnorm(&x, &ones(1), &Tensor::zeros(&[1]), Some(&st)).unwrap();
        assert!(batch.is_none());
        assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut r = BnStats {
            mean: vec![0.0],
            var: vec![1.0],
        };
        update_running(
            &mut r,
            &BnStats {
                mean: vec![1.0],
                var: vec![3.0],
            },
        );
        assert!((r.mean[0] - 0.1).abs() < 1e-7 && (r.var[0] - 1.2).abs() < 1e-6);
    }
}
