use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One device's slice of the training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub device_id: u16,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fixed batch partition; the last batch may be short.
    pub fn batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        self.indices.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Seeded IID split of `indices` into `k` disjoint shards whose sizes differ by at most one.
pub fn shard_uniform(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Shard>> {
    if k == 0 || k > u16::MAX as usize {
        return Err(Error::Config(format!("{k} devices")));
    }
    if indices.len() < k {
        return Err(Error::EmptyDataset(format!("{} samples for {k} devices", indices.len())));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut rest = shuffled.as_slice();
    Ok((0..k)
        .map(|i| {
            let take = base + usize::from(i < extra);
            let (mine, tail) = rest.split_at(take);
            rest = tail;
            Shard { device_id: i as u16, indices: mine.to_vec() }
        })
        .collect())
}
