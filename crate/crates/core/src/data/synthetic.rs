//! Dual-label images: the utility label picks a foreground glyph, the
//! privacy label an independent background texture.

use rand::Rng;

use super::Dataset;
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

pub const SYNTHETIC_SIDE: usize = 16;
const NOISE_SIGMA: f32 = 0.05;

/// y: 0 bar, 1 cross, 2 box, 3 diagonal. Glyphs span 8x8 before offset.
fn glyph(y: usize, r: isize, c: isize) -> bool {
    let inside = (0..8).contains(&r) && (0..8).contains(&c);
    inside
        && match y {
            0 => (3..5).contains(&r),
            1 => (3..5).contains(&r) || (3..5).contains(&c),
            2 => r == 0 || r == 7 || c == 0 || c == 7,
            _ => (r - c).abs() <= 1,
        }
}

/// z: 0 flat, 1 horizontal stripes, 2 checker, 3 left-right gradient; in [0,1].
fn texture(z: usize, r: usize, c: usize) -> f32 {
    match z {
        0 => 0.5,
        1 => ((r / 2) % 2) as f32,
        2 => ((r / 2 + c / 2) % 2) as f32,
        _ => c as f32 / (SYNTHETIC_SIDE - 1) as f32,
    }
}

/// `n` samples of shape 1x16x16, all in the training part; split with
/// [`Dataset::split`].
pub fn make_synthetic_dual(n: usize, seed: u64) -> Result<Dataset> {
    let s = SYNTHETIC_SIDE;
    let mut r = rng::rng(rng::derive_seed(seed, "synthetic"));
    let mut data = Vec::with_capacity(n * s * s);
    let (mut ys, mut zs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let y = r.random_range(0..4);
        let z = r.random_range(0..4);
        let amp: f32 = r.random_range(0.1..0.25);
        let dr = r.random_range(-2i32..=2) as isize;
        let dc = r.random_range(-2i32..=2) as isize;
        for row in 0..s {
            for col in 0..s {
                let on = glyph(y, row as isize - 4 - dr, col as isize - 4 - dc);
                let base = if on {
                    1.0
                } else {
                    0.05 + amp * texture(z, row, col)
                };
                data.push((base + rng::gaussian(&mut r, NOISE_SIGMA)).clamp(0.0, 1.0));
            }
        }
        ys.push(y);
        zs.push(z);
    }
    Dataset::new(Tensor::new(vec![n, 1, s, s], data)?, ys, Some(zs))
}
