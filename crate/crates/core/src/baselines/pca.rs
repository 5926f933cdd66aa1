use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{PanError, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Mean and top-`d` principal directions of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `[d, D]`, rows orthonormal, ordered by decreasing eigenvalue
    pub components: DMatrix<f64>,
    /// all `D` covariance eigenvalues, descending
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn dims(&self) -> usize {
        self.components.nrows()
    }

    /// `[N, d]` coordinates of flattened `features` in the basis.
    pub fn project(&self, features: &Tensor) -> Result<DMatrix<f64>> {
        let x = centered(features, &self.mean)?;
        Ok(x * self.components.transpose())
    }

    /// Maps coordinates back to a tensor of `shape`.
    pub fn reconstruct(&self, coords: &DMatrix<f64>, shape: &[usize]) -> Result<Tensor> {
        let back = coords * &self.components;
        let (n, d) = back.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend((0..d).map(|j| (back[(i, j)] + self.mean[j]) as f32));
        }
        Tensor::new(shape.to_vec(), data)
    }
}

fn flat_dims(features: &Tensor) -> (usize, usize) {
    (features.batch(), features.per_sample())
}

fn centered(features: &Tensor, mean: &[f64]) -> Result<DMatrix<f64>> {
    let (n, d) = flat_dims(features);
    if d != mean.len() {
        return Err(PanError::Shape(format!(
            "features have {d} dims, basis {}",
            mean.len()
        )));
    }
    let data = features.data();
    Ok(DMatrix::from_fn(n, d, |i, j| {
        data[i * d + j] as f64 - mean[j]
    }))
}

/// Top-`d` eigenvectors of the (biased) feature covariance.
pub fn fit_pca(features: &Tensor, d: usize) -> Result<PcaBasis> {
    let (n, dim) = flat_dims(features);
    if d == 0 || d > dim {
        return Err(PanError::Config(format!(
            "PCA needs 1 <= d <= {dim}, got {d}"
        )));
    }
    if n == 0 {
        return Err(PanError::Contract("PCA on an empty feature set".into()));
    }
    let data = features.data();
    let mut mean = vec![0.0f64; dim];
    for row in data.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = centered(features, &mean)?;
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let components = DMatrix::from_fn(d, dim, |r, c| eig.eigenvectors[(c, order[r])]);
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

/// Projects to the basis, adds Laplace(0, b) to every coordinate and maps
/// back to the original feature shape.
pub fn hybrid_transform(features: &Tensor, basis: &PcaBasis, b: f32, seed: u64) -> Result<Tensor> {
    let mut coords = basis.project(features)?;
    let mut r = rng::rng(rng::derive_seed(seed, "hybrid"));
    coords
        .iter_mut()
        .for_each(|v| *v += rng::laplace(&mut r, b) as f64);
    basis.reconstruct(&coords, features.shape())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_data() {
        // variance 4 along axis 1, 1 along axis 0
        let x = Tensor::new(vec![4, 2], vec![1.0, 2.0, -1.0, -2.0, 1.0, -2.0, -1.0, 2.0]).unwrap();
        let basis = fit_pca(&x, 2).unwrap();
        assert!((basis.eigenvalues[0] - 4.0).abs() < 1e-9);
        assert!((basis.eigenvalues[1] - 1.0).abs() < 1e-9);
        assert!((basis.components[(0, 1)].abs() - 1.0).abs() < 1e-9);
        assert!(fit_pca(&x, 3).is_err());
    }

    #[test]
    fn full_rank_round_trip() {
        let x = Tensor::from_fn(&[20, 2, 3], |i| ((i * 7919) % 101) as f32 / 50.0);
        let basis = fit_pca(&x, 6).unwrap();
        let y = hybrid_transform(&x, &basis, 0.0, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn rank_one_data() {
        let x = Tensor::from_fn(&[10, 2], |i| {
            (i / 2) as f32 * if i % 2 == 0 { 1.0 } else { 2.0 }
        });
        let basis = fit_pca(&x, 1).unwrap();
        let coords = basis.project(&x).unwrap();
        let back = basis.reconstruct(&coords, x.shape()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
