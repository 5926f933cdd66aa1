use crate::error::{shape_err, PanError, Result};
use crate::tensor::Tensor;

/// Lower clamp on probabilities before taking logs.
pub const LOG_EPS: f32 = 1e-7;

const ROW_SUM_TOL: f32 = 1e-5;

fn check_probs(p: &Tensor, labels: &[usize]) -> Result<usize> {
    let &[n, c] = p.shape() else {
        return shape_err(format!(
            "cross_entropy expects [N,C] predictions, got {:?}",
            p.shape()
        ));
    };
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} predictions", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(PanError::Index(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    for (i, row) in p.data().chunks(c).enumerate() {
        let s: f32 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(PanError::Contract(format!(
                "prediction row {i} sums to {s}, not 1"
            )));
        }
    }
    Ok(c)
}

/// Mean over the batch of `-ln p(true class)`.
pub fn cross_entropy(p: &Tensor, labels: &[usize]) -> Result<f32> {
    let c = check_probs(p, labels)?;
    let n = labels.len();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -(p.data()[i * c + l].max(LOG_EPS) as f64).ln())
        .sum();
    Ok((total / n as f64) as f32)
}

pub fn cross_entropy_backward(p: &Tensor, labels: &[usize], grad: f32) -> Tensor {
    let c = p.shape()[1];
    let n = labels.len() as f32;
    let mut d = Tensor::zeros(p.shape());
    for (i, &l) in labels.iter().enumerate() {
        let v = p.data()[i * c + l];
        if v > LOG_EPS {
            d.data_mut()[i * c + l] = -grad / (n * v);
        }
    }
    d
}

/// Mean squared elementwise difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f32> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "mse shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    if a.is_empty() {
        return shape_err("mse of empty tensors");
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum();
    Ok((s / a.len() as f64) as f32)
}

/// Gradient of [`mse`] with respect to `a` (the gradient for `b` is its negation).
pub fn mse_backward(a: &Tensor, b: &Tensor, grad: f32) -> Tensor {
    let k = 2.0 * grad / a.len() as f32;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| k * (x - y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("mse grad")
}
