//! 2-D convolution (cross-correlation) and its adjoint, the transposed
//! convolution, lowered to GEMMs over im2col patches.
//!
//! Each sample gets its own `[C·kh·kw, Ho·Wo]` patch matrix, so the small
//! channel dimension is the GEMM's row count and the output lands in
//! `[K, Ho·Wo]` order without a transpose. Samples run in parallel; weight
//! gradients are summed in sample order.

use super::gemm::gemm;
use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::Tensor;

/// Spatial geometry shared by a convolution and its transpose. `h`/`w`
/// are the conv input size, `oh`/`ow` the conv output size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn conv(
        channels: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return shape_err("stride must be positive");
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return shape_err(format!(
                "kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}"
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Geometry of the convolution whose adjoint maps `oh x ow` inputs to
    /// `(oh-1)·stride - 2·pad + kh` outputs.
    pub fn transposed(
        channels: usize,
        oh: usize,
        ow: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || oh == 0 || ow == 0 {
            return shape_err("transposed conv needs positive stride and input size");
        }
        let h = ((oh - 1) * stride + kh).checked_sub(2 * pad);
        let w = ((ow - 1) * stride + kw).checked_sub(2 * pad);
        match (h, w) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Self::conv(channels, h, w, kh, kw, stride, pad),
            _ => shape_err(format!(
                "padding {pad} too large for transposed conv of {oh}x{ow}"
            )),
        }
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn plane(&self) -> usize {
        self.channels * self.h * self.w
    }
}

/// Output columns `lo..hi` whose input column `o·stride + j − pad` lies
/// inside `0..w`.
fn valid_range(w: usize, out: usize, stride: usize, pad: usize, j: usize) -> (usize, usize) {
    let lo = if pad > j {
        (pad - j).div_ceil(stride)
    } else {
        0
    };
    let hi = if w + pad > j {
        ((w + pad - j - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// One sample `[C, H, W]` into a patch matrix `[C·kh·kw, Ho·Wo]`.
fn im2col(g: &ConvGeom, x: &[f32], cols: &mut [f32]) {
    let p = g.positions();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let (lo, hi) = valid_range(g.w, g.ow, g.stride, g.pad, j);
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y as usize >= g.h || lo == hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let start = lo * g.stride + j - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (o, &v) in out[lo..hi]
                            .iter_mut()
                            .zip(src[start..].iter().step_by(g.stride))
                        {
                            *o = v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a patch matrix back into one sample `[C, H, W]`.
fn col2im(g: &ConvGeom, cols: &[f32], x: &mut [f32]) {
    let p = g.positions();
    x.fill(0.0);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let (lo, hi) = valid_range(g.w, g.ow, g.stride, g.pad, j);
                let src = &cols[row * p..(row + 1) * p];
                row += 1;
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    let start = lo * g.stride + j - g.pad;
                    let seg = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, &v) in dst[start..].iter_mut().step_by(g.stride).zip(seg) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn add_channel_bias(out: &mut [f32], bias: &[f32]) {
    let plane = out.len() / bias.len().max(1);
    for (ch, &b) in bias.iter().enumerate() {
        out[ch * plane..(ch + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += b);
    }
}

fn channel_sums(x: &[f32], k: usize, plane: usize) -> Vec<f32> {
    let mut s = vec![0.0f32; k];
    for sample in x.chunks(k * plane) {
        for ch in 0..k {
            s[ch] += sample[ch * plane..(ch + 1) * plane].iter().sum::<f32>();
        }
    }
    s
}

/// Sums per-sample partial weight gradients in sample order, so the result
/// does not depend on how samples were scheduled.
fn sum_in_order(parts: Vec<Vec<f32>>, len: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; len];
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    acc
}

fn check4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => shape_err(format!("{what} must be 4-D [N,C,H,W], got {s:?}")),
    }
}

/// Validates conv operands and returns the geometry.
pub fn conv2d_geom(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let [_, c, h, w] = check4(input, "conv2d input")?;
    let [k, kc, kh, kw] = check4(kernels, "conv2d kernels")?;
    if kc != c {
        return shape_err(format!(
            "conv2d kernel expects {kc} input channels, input has {c}"
        ));
    }
    if bias.shape() != [k] {
        return shape_err(format!("conv2d bias must be [{k}], got {:?}", bias.shape()));
    }
    ConvGeom::conv(c, h, w, kh, kw, stride, pad)
}

pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv2d_geom(input, kernels, bias, stride, pad)?;
    let n = input.batch();
    let k = kernels.shape()[0];
    let p = g.positions();
    let mut out = vec![0.0; n * k * p];
    par::for_each_chunk_mut(&mut out, k * p, |s, o| {
        let mut cols = vec![0.0; g.patch() * p];
        im2col(
            &g,
            &input.data()[s * g.plane()..(s + 1) * g.plane()],
            &mut cols,
        );
        gemm(k, g.patch(), p, kernels.data(), false, &cols, false, 0.0, o);
        add_channel_bias(o, bias.data());
    });
    Tensor::new(vec![n, k, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`]: `(d_input, d_kernels, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    g: &ConvGeom,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let n = input.batch();
    let k = kernels.shape()[0];
    let (p, patch, plane) = (g.positions(), g.patch(), g.plane());
    let per_sample = par::map_range(n, |s| {
        let dy = &grad_out.data()[s * k * p..(s + 1) * k * p];
        let mut cols = vec![0.0; patch * p];
        im2col(g, &input.data()[s * plane..(s + 1) * plane], &mut cols);
        let mut dw = vec![0.0; k * patch];
        gemm(k, p, patch, dy, false, &cols, true, 0.0, &mut dw);
        let dx = need_input_grad.then(|| {
            gemm(patch, k, p, kernels.data(), true, dy, false, 0.0, &mut cols);
            let mut dx = vec![0.0; plane];
            col2im(g, &cols, &mut dx);
            dx
        });
        (dw, dx)
    });
    let (dws, dxs): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    let dw = sum_in_order(dws, k * patch);
    let db = channel_sums(grad_out.data(), k, p);
    let dx = need_input_grad.then(|| {
        let data: Vec<f32> = dxs
            .into_iter()
            .flat_map(|d| d.expect("requested"))
            .collect();
        Tensor::new(input.shape().to_vec(), data).expect("conv2d dx shape")
    });
    (
        dx,
        Tensor::new(kernels.shape().to_vec(), dw).expect("conv2d dw shape"),
        Tensor::new(vec![k], db).expect("conv2d db shape"),
    )
}

/// Validates transposed-conv operands. `kernels` is `[K_in, C_out, kh, kw]`,
/// the same layout as the convolution it is the adjoint of.
pub fn transposed_conv2d_geom(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let [_, k, oh, ow] = check4(input, "transposed_conv2d input")?;
    let [kk, c, kh, kw] = check4(kernels, "transposed_conv2d kernels")?;
    if kk != k {
        return shape_err(format!(
            "transposed_conv2d kernel expects {kk} input channels, input has {k}"
        ));
    }
    if bias.shape() != [c] {
        return shape_err(format!(
            "transposed_conv2d bias must be [{c}], got {:?}",
            bias.shape()
        ));
    }
    let g = ConvGeom::transposed(c, oh, ow, kh, kw, stride, pad)?;
    if g.oh != oh || g.ow != ow {
        return shape_err("transposed_conv2d geometry does not invert");
    }
    Ok(g)
}

pub fn transposed_conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = transposed_conv2d_geom(input, kernels, bias, stride, pad)?;
    let n = input.batch();
    let k = kernels.shape()[0];
    let p = g.positions();
    let mut out = vec![0.0; n * g.plane()];
    par::for_each_chunk_mut(&mut out, g.plane(), |s, o| {
        let mut cols = vec![0.0; g.patch() * p];
        gemm(
            g.patch(),
            k,
            p,
            kernels.data(),
            true,
            &input.data()[s * k * p..(s + 1) * k * p],
            false,
            0.0,
            &mut cols,
        );
        col2im(&g, &cols, o);
        add_channel_bias(o, bias.data());
    });
    Tensor::new(vec![n, g.channels, g.h, g.w], out)
}

/// Gradients of [`transposed_conv2d`]: `(d_input, d_kernels, d_bias)`.
pub fn transposed_conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    g: &ConvGeom,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let n = input.batch();
    let k = kernels.shape()[0];
    let (p, patch, plane) = (g.positions(), g.patch(), g.plane());
    let per_sample = par::map_range(n, |s| {
        let y = &input.data()[s * k * p..(s + 1) * k * p];
        let mut cols = vec![0.0; patch * p];
        im2col(g, &grad_out.data()[s * plane..(s + 1) * plane], &mut cols);
        let mut dw = vec![0.0; k * patch];
        gemm(k, p, patch, y, false, &cols, true, 0.0, &mut dw);
        let dy = need_input_grad.then(|| {
            let mut dy = vec![0.0; k * p];
            gemm(
                k,
                patch,
                p,
                kernels.data(),
                false,
                &cols,
                false,
                0.0,
                &mut dy,
            );
            dy
        });
        (dw, dy)
    });
    let (dws, dys): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    let dw = sum_in_order(dws, k * patch);
    let db = channel_sums(grad_out.data(), g.channels, g.h * g.w);
    let dx = need_input_grad.then(|| {
        let data: Vec<f32> = dys
            .into_iter()
            .flat_map(|d| d.expect("requested"))
            .collect();
        Tensor::new(input.shape().to_vec(), data).expect("tconv dx shape")
    });
    (
        dx,
        Tensor::new(kernels.shape().to_vec(), dw).expect("tconv dw shape"),
        Tensor::new(vec![g.channels], db).expect("tconv db shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Direct sliding-window definition, independent of im2col.
    fn conv_direct(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [k, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        Tensor::from_fn(&[n, k, oh, ow], |idx| {
            let ox = idx % ow;
            let oy = (idx / ow) % oh;
            let ko = (idx / (ow * oh)) % k;
            let s = idx / (ow * oh * k);
            let mut acc = b.data()[ko];
            for ci in 0..c {
                for i in 0..kh {
                    for j in 0..kw {
                        let y = (oy * stride + i) as isize - pad as isize;
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < wd {
                            acc += x.data()[((s * c + ci) * h + y as usize) * wd + xx as usize]
                                * w.data()[((ko * c + ci) * kh + i) * kw + j];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn scaling_kernel() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[2.]), &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(&[2, 1, 3, 4], |i| i as f32 * 0.5 - 3.0);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.]), &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn sliding_window_sum() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32 + 1.0);
        let y = conv2d(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn matches_direct_definition_with_stride_and_padding() {
        let x = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 7919) % 23) as f32 / 11.0 - 1.0);
        let w = Tensor::from_fn(&[4, 3, 3, 2], |i| ((i * 104729) % 17) as f32 / 8.0 - 1.0);
        let b = t(&[4], &[0.1, -0.2, 0.3, 0.0]);
        for (stride, pad) in [(1, 0), (2, 1), (3, 2)] {
            let got = conv2d(&x, &w, &b, stride, pad).unwrap();
            let want = conv_direct(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-4, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv2d(
            &x,
            &Tensor::zeros(&[1, 3, 2, 2]),
            &Tensor::zeros(&[1]),
            1,
            0
        )
        .is_err());
        assert!(conv2d(
            &x,
            &Tensor::zeros(&[1, 2, 5, 5]),
            &Tensor::zeros(&[1]),
            1,
            0
        )
        .is_err());
        assert!(conv2d(
            &x,
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::zeros(&[2]),
            1,
            0
        )
        .is_err());
        assert!(conv2d(
            &Tensor::zeros(&[2, 4, 4]),
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::zeros(&[1]),
            1,
            0
        )
        .is_err());
    }

    #[test]
    fn transposed_single_element_spread() {
        let y = transposed_conv2d(
            &t(&[1, 1, 1, 1], &[1.]),
            &Tensor::full(&[1, 1, 2, 2], 1.0),
            &t(&[1], &[0.]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn transposed_zero_input_gives_bias() {
        let y = transposed_conv2d(
            &Tensor::zeros(&[2, 3, 4, 4]),
            &Tensor::full(&[3, 2, 3, 3], 0.7),
            &t(&[2], &[0.5, -1.5]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[2, 2, 7, 7]);
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 49) % 2;
            assert_eq!(*v, if ch == 0 { 0.5 } else { -1.5 });
        }
    }

    #[test]
    fn output_size_formula() {
        let y = transposed_conv2d(
            &Tensor::zeros(&[1, 2, 5, 3]),
            &Tensor::zeros(&[2, 1, 4, 3]),
            &Tensor::zeros(&[1]),
            3,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, (5 - 1) * 3 - 2 + 4, (3 - 1) * 3 - 2 + 3]);
    }
}
