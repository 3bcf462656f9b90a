//! Datasets, sharding and augmentation.

mod augment;
mod blobs;
pub mod idx;
mod shard;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::augment_hflip;
pub use blobs::generate_blobs;
pub use idx::{load_idx, write_idx};
pub use shard::{shard_uniform, Shard};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images in `(N, C, H, W)` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!("images must be (N, C, H, W), got {:?}", images.shape())));
        }
        if images.batch() != labels.len() {
            return Err(Error::Shape(format!("{} images, {} labels", images.batch(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelRange { label, classes: num_classes });
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample `(C, H, W)` shape.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images = self.images.gather(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        let (images, labels) = self.batch(indices)?;
        Dataset::new(images, labels, self.num_classes)
    }
}

/// Disjoint index sets for pre-training, federated training and testing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub pretrain: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Seeded shuffle of `0..n`, then consecutive pretrain / test / train ranges.
    pub fn new(n: usize, pretrain_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&pretrain_fraction)
            || !(0.0..1.0).contains(&test_fraction)
            || pretrain_fraction + test_fraction >= 1.0
        {
            return Err(Error::Config(format!(
                "split fractions pretrain={pretrain_fraction} test={test_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_pre = (n as f64 * pretrain_fraction).round() as usize;
        let n_test = (n as f64 * test_fraction).round() as usize;
        let train = idx.split_off(n_pre + n_test);
        let test = idx.split_off(n_pre);
        if train.is_empty() {
            return Err(Error::EmptyDataset("training split".into()));
        }
        Ok(Splits { pretrain: idx, train, test })
    }
}
