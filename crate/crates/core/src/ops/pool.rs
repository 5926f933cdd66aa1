use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::Tensor;

/// Max pooling without padding. Returns the pooled tensor and, per output
/// element, the in-plane index of its argmax (first occurrence on ties).
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    let &[n, c, h, w] = input.shape() else {
        return shape_err(format!(
            "maxpool2d input must be 4-D, got {:?}",
            input.shape()
        ));
    };
    if window == 0 || stride == 0 {
        return shape_err("maxpool2d window and stride must be positive");
    }
    if window > h || window > w {
        return shape_err(format!(
            "maxpool2d window {window} larger than input {h}x{w}"
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let planes = n * c;
    let mut out = vec![0.0f32; planes * oh * ow];
    let mut idx = vec![0u32; planes * oh * ow];
    let x = input.data();
    // one plane per chunk, values and indices computed together
    let results = par::map_range(planes, |p| {
        let src = &x[p * h * w..(p + 1) * h * w];
        let mut vals = Vec::with_capacity(oh * ow);
        let mut args = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut arg = (oy * stride) * w + ox * stride;
                for i in 0..window {
                    for j in 0..window {
                        let at = (oy * stride + i) * w + ox * stride + j;
                        if src[at] > best {
                            best = src[at];
                            arg = at;
                        }
                    }
                }
                vals.push(best);
                args.push(arg as u32);
            }
        }
        (vals, args)
    });
    for (p, (vals, args)) in results.into_iter().enumerate() {
        out[p * oh * ow..(p + 1) * oh * ow].copy_from_slice(&vals);
        idx[p * oh * ow..(p + 1) * oh * ow].copy_from_slice(&args);
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, idx))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2d_backward(input_shape: &[usize], indices: &[u32], grad_out: &Tensor) -> Tensor {
    let plane_in = input_shape[2] * input_shape[3];
    let plane_out = grad_out.shape()[2] * grad_out.shape()[3];
    let mut dx = Tensor::zeros(input_shape);
    let g = grad_out.data();
    par::for_each_chunk_mut(dx.data_mut(), plane_in, |p, d| {
        for q in 0..plane_out {
            d[indices[p * plane_out + q] as usize] += g[p * plane_out + q];
        }
    });
    dx
}

/// Nearest-value un-pooling: each value becomes a `scale x scale` block.
pub fn unpool_nearest(input: &Tensor, scale: usize) -> Result<Tensor> {
    let &[n, c, h, w] = input.shape() else {
        return shape_err(format!("unpool input must be 4-D, got {:?}", input.shape()));
    };
    if scale == 0 {
        return shape_err("unpool scale must be >= 1");
    }
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![0.0; n * c * oh * ow];
    let x = input.data();
    par::for_each_chunk_mut(&mut out, oh * ow, |p, o| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                o[y * ow + xx] = src[(y / scale) * w + xx / scale];
            }
        }
    });
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn unpool_nearest_backward(input_shape: &[usize], scale: usize, grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h * scale, w * scale);
    let mut dx = Tensor::zeros(input_shape);
    let g = grad_out.data();
    par::for_each_chunk_mut(dx.data_mut(), h * w, |p, d| {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                d[(y / scale) * w + xx / scale] += src[y * ow + xx];
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::full(&[2, 3, 6, 4], 0.25);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.25));
        // ties resolve to the first position of each window
        assert_eq!(&idx[..2], &[0, 2]);
    }

    #[test]
    fn sixteen_grid_brute_force() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32 + 1.0);
        let (y, _) = maxpool2d(&x, 2, 2).unwrap();
        // brute force: max of each 2x2 block
        let mut want = vec![];
        for by in 0..2 {
            for bx in 0..2 {
                let mut m = f32::MIN;
                for i in 0..2 {
                    for j in 0..2 {
                        m = m.max(x.data()[(by * 2 + i) * 4 + bx * 2 + j]);
                    }
                }
                want.push(m);
            }
        }
        assert_eq!(y.data(), want.as_slice());
        assert_eq!(y.data(), &[6., 8., 14., 16.]);
    }

    #[test]
    fn window_too_large() {
        assert!(maxpool2d(&Tensor::zeros(&[1, 1, 2, 3]), 3, 1).is_err());
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| ((i * 37) % 29) as f32);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        let g = Tensor::full(y.shape(), 1.0);
        let dx = maxpool2d_backward(x.shape(), &idx, &g);
        assert_eq!(dx.sum(), y.len() as f32);
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), y.len());
    }

    #[test]
    fn unpool_replicates() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.]).unwrap();
        assert_eq!(unpool_nearest(&x, 2).unwrap().data(), &[5.; 4]);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(unpool_nearest(&x, 1).unwrap(), x);
        let y = unpool_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(y.data()[r * 4 + c], x.data()[(r / 2) * 2 + c / 2]);
            }
        }
    }
}
