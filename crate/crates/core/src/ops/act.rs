use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("relu grad")
}

/// Row-wise softmax over `[N, C]`.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let &[_, c] = x.shape() else {
        return shape_err(format!("softmax expects [N,C], got {:?}", x.shape()));
    };
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let c = probs.shape()[1];
    let mut dx = vec![0.0; probs.len()];
    for ((p, g), d) in probs
        .data()
        .chunks(c)
        .zip(grad_out.data().chunks(c))
        .zip(dx.chunks_mut(c))
    {
        let dot: f32 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..c {
            d[k] = p[k] * (g[k] - dot);
        }
    }
    Tensor::new(probs.shape().to_vec(), dx).expect("softmax grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let y = relu(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_values() {
        let y = softmax(&Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let e = (1.0f64).exp() / ((1.0f64).exp() + (2.0f64).exp());
        assert!((y.data()[0] as f64 - e).abs() < 1e-6);
        assert!((y.data()[0] - 0.2689).abs() < 1e-4 && (y.data()[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let y = softmax(&Tensor::new(vec![1, 3], vec![1000.0, 0.0, -1000.0]).unwrap()).unwrap();
        assert!(y.all_finite());
        assert!((y.sum() - 1.0).abs() < 1e-6);
    }
}
