use super::gemm::gemm;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Affine map `x · W + b` for `x: [N, D]`, `W: [D, O]`, `b: [O]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[n, d], &[wd, o]) = (x.shape(), w.shape()) else {
        return shape_err(format!(
            "dense expects [N,D] x [D,O], got {:?} x {:?}",
            x.shape(),
            w.shape()
        ));
    };
    if d != wd {
        return shape_err(format!("dense inner dims differ: {d} vs {wd}"));
    }
    if b.shape() != [o] {
        return shape_err(format!("dense bias must be [{o}], got {:?}", b.shape()));
    }
    let mut out: Vec<f32> = b.data().iter().copied().cycle().take(n * o).collect();
    gemm(n, d, o, x.data(), false, w.data(), false, 1.0, &mut out);
    Tensor::new(vec![n, o], out)
}

/// Gradients `(d_x, d_w, d_b)`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut dw = vec![0.0; d * o];
    gemm(
        d,
        n,
        o,
        x.data(),
        true,
        grad_out.data(),
        false,
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0f32; o];
    for row in grad_out.data().chunks(o) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    let dx = need_input_grad.then(|| {
        let mut dx = vec![0.0; n * d];
        gemm(
            n,
            o,
            d,
            grad_out.data(),
            false,
            w.data(),
            true,
            0.0,
            &mut dx,
        );
        Tensor::new(vec![n, d], dx).expect("dense dx")
    });
    (
        dx,
        Tensor::new(vec![d, o], dw).expect("dense dw"),
        Tensor::new(vec![o], db).expect("dense db"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_bias_cases() {
        let x = t(&[2, 2], &[1., 2., 3., 4.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense(&x, &Tensor::zeros(&[2, 3]), &t(&[3], &[1., 2., 3.])).unwrap();
        assert_eq!(y.data(), &[1., 2., 3., 1., 2., 3.]);
        let y = dense(&t(&[1, 2], &[1., 2.]), &eye, &t(&[2], &[1., 1.])).unwrap();
        assert_eq!(y.data(), &[2., 3.]);
    }

    #[test]
    fn mismatched_inner_dims() {
        assert!(dense(
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[3])
        )
        .is_err());
    }
}
