//! Datasets, train/test splits and mini-batching.

mod idx;
mod synthetic;

pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, read_idx_images, write_idx_images,
    write_idx_labels,
};
pub use synthetic::{make_synthetic_dual, SYNTHETIC_SIDE};

use crate::error::{PanError, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Samples with aligned labels. Used both for raw images and for encoded
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub z: Option<Vec<usize>>,
}

/// One mini-batch, copied out of a [`Split`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub z: Option<Vec<usize>>,
}

impl Split {
    pub fn new(x: Tensor, y: Vec<usize>, z: Option<Vec<usize>>) -> Result<Self> {
        let n = x.batch();
        if x.rank() < 2 {
            return Err(PanError::Shape(format!(
                "samples need a leading batch dimension, got {:?}",
                x.shape()
            )));
        }
        if y.len() != n || z.as_ref().is_some_and(|z| z.len() != n) {
            return Err(PanError::Shape(format!(
                "label arrays do not align with {n} samples"
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    pub fn gather(&self, idx: &[usize]) -> Result<Batch> {
        Ok(Batch {
            x: self.x.gather_rows(idx)?,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: self.z.as_ref().map(|z| idx.iter().map(|&i| z[i]).collect()),
        })
    }

    /// Same labels, different sample tensor (e.g. encoded features).
    pub fn with_x(&self, x: Tensor) -> Result<Self> {
        Self::new(x, self.y.clone(), self.z.clone())
    }

    /// Seeded shuffle for `epoch`, cut into batches of `m`; the last batch
    /// may be short.
    pub fn batches(&self, m: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
        if m == 0 {
            return Err(PanError::Config("batch size must be positive".into()));
        }
        let order = epoch_order(self.len(), seed, epoch);
        order.chunks(m).map(|idx| self.gather(idx)).collect()
    }
}

/// The permutation used by [`Split::batches`].
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut r = rng::rng(rng::derive_seed(seed, &format!("batches/{epoch}")));
    rng::permutation(n, &mut r)
}

/// All samples plus a train/test boundary: indices `0..n_train` are the
/// training set, the rest the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Split,
    n_train: usize,
    y_classes: usize,
    z_classes: Option<usize>,
}

fn class_count(labels: &[usize], what: &str) -> Result<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    for &l in labels {
        seen[l] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(PanError::Contract(format!(
            "{what} classes are not contiguous from 0"
        )));
    }
    Ok(k)
}

impl Dataset {
    /// Every sample starts in the training set.
    pub fn new(images: Tensor, y: Vec<usize>, z: Option<Vec<usize>>) -> Result<Self> {
        let samples = Split::new(images, y, z)?;
        let y_classes = class_count(&samples.y, "utility")?;
        let z_classes = samples
            .z
            .as_deref()
            .map(|z| class_count(z, "privacy"))
            .transpose()?;
        let n_train = samples.len();
        Ok(Self {
            samples,
            n_train,
            y_classes,
            z_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.samples.sample_shape()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_test(&self) -> usize {
        self.len() - self.n_train
    }

    pub fn y_classes(&self) -> usize {
        self.y_classes
    }

    pub fn z_classes(&self) -> Option<usize> {
        self.z_classes
    }

    pub fn has_privacy_labels(&self) -> bool {
        self.samples.z.is_some()
    }

    pub fn all(&self) -> &Split {
        &self.samples
    }

    fn range(&self, start: usize, end: usize) -> Split {
        let idx: Vec<usize> = (start..end).collect();
        let b = self.samples.gather(&idx).expect("range within bounds");
        Split {
            x: b.x,
            y: b.y,
            z: b.z,
        }
    }

    pub fn train(&self) -> Split {
        self.range(0, self.n_train)
    }

    pub fn test(&self) -> Split {
        self.range(self.n_train, self.len())
    }

    /// Reorders samples and sets the boundary.
    fn reordered(&self, order: &[usize], n_train: usize) -> Result<Self> {
        let b = self.samples.gather(order)?;
        Ok(Self {
            samples: Split {
                x: b.x,
                y: b.y,
                z: b.z,
            },
            n_train,
            ..*self
        })
    }

    /// Seeded permutation, then the first `round(fraction·N)` samples train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(PanError::Config(format!(
                "train fraction {train_fraction} outside [0,1]"
            )));
        }
        let n = self.len();
        let order = rng::permutation(n, &mut rng::rng(rng::derive_seed(seed, "split")));
        self.reordered(&order, (train_fraction * n as f64).round() as usize)
    }

    /// Seeded subsample of `n_train + n_test` samples, split in that order.
    pub fn subsample(&self, n_train: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train + n_test > self.len() {
            return Err(PanError::Config(format!(
                "requested {n_train}+{n_test} samples from a dataset of {}",
                self.len()
            )));
        }
        let order = rng::permutation(
            self.len(),
            &mut rng::rng(rng::derive_seed(seed, "subsample")),
        );
        self.reordered(&order[..n_train + n_test], n_train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let x = Tensor::from_fn(&[n, 1, 2, 2], |i| (i / 4) as f32);
        Dataset::new(
            x,
            (0..n).map(|i| i % 3).collect(),
            Some((0..n).map(|i| i % 2).collect()),
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_and_union() {
        let d = toy(10);
        let train = d.train();
        let batches = train.batches(3, 7, 0).unwrap();
        assert_eq!(
            batches.iter().map(|b| b.y.len()).collect::<Vec<_>>(),
            vec![3, 3, 3, 1]
        );
        let mut seen: Vec<usize> = batches
            .iter()
            .flat_map(|b| b.x.data().iter().step_by(4).map(|&v| v as usize))
            .collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epoch_changes_order_deterministically() {
        assert_eq!(epoch_order(50, 1, 3), epoch_order(50, 1, 3));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 1, 4));
        let mut p = epoch_order(50, 1, 4);
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn split_fractions() {
        let d = toy(70);
        let s = d.split(5.0 / 7.0, 1).unwrap();
        assert_eq!((s.n_train(), s.n_test()), (50, 20));
        assert_eq!(s, d.split(5.0 / 7.0, 1).unwrap());
        let all = d.split(1.0, 1).unwrap();
        assert_eq!(all.n_test(), 0);
        assert_eq!(all.test().len(), 0);
        // disjoint and exhaustive: sample ids are their pixel values
        let mut ids: Vec<usize> = s
            .train()
            .x
            .data()
            .iter()
            .chain(s.test().x.data())
            .step_by(4)
            .map(|&v| v as usize)
            .collect();
        ids.sort();
        assert_eq!(ids, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_counts() {
        let d = toy(30).subsample(10, 5, 2).unwrap();
        assert_eq!((d.n_train(), d.n_test()), (10, 5));
        assert!(toy(30).subsample(30, 1, 2).is_err());
    }

    #[test]
    fn misaligned_labels_rejected() {
        assert!(Dataset::new(Tensor::zeros(&[3, 1, 2, 2]), vec![0, 1], None).is_err());
        assert!(Dataset::new(Tensor::zeros(&[2, 1, 2, 2]), vec![0, 2], None).is_err());
    }
}
