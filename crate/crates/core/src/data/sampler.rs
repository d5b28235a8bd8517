//! Domain-balanced batch sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::MultiDomainDataset;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Endless stream of id batches holding exactly `per_domain` ids from each pool.
///
/// Each pool is walked in a shuffled order that is redrawn whenever it runs
/// out, so one pass covers every id. A pool smaller than `per_domain` is
/// sampled with replacement instead.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pools: Vec<Vec<usize>>,
    per_domain: usize,
    rng: ChaCha8Rng,
    cursors: Vec<usize>,
}

impl BatchSampler {
    pub fn new(pools: Vec<Vec<usize>>, per_domain: usize, rng: ChaCha8Rng) -> Result<Self> {
        if per_domain == 0 {
            return Err(invalid("per_domain must be at least 1"));
        }
        if pools.is_empty() || pools.iter().any(|p| p.is_empty()) {
            return Err(invalid("every source pool must be non-empty"));
        }
        for (d, pool) in pools.iter().enumerate() {
            if pool.len() < per_domain {
                log::warn!(
                    "source pool {d} has {} images, fewer than {per_domain} per batch; sampling with replacement",
                    pool.len()
                );
            }
        }
        let cursors = pools.iter().map(|p| p.len()).collect();
        Ok(Self {
            pools,
            per_domain,
            rng,
            cursors,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.per_domain * self.pools.len()
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size());
        for d in 0..self.pools.len() {
            let pool = &mut self.pools[d];
            if pool.len() < self.per_domain {
                for _ in 0..self.per_domain {
                    batch.push(pool[self.rng.random_range(0..pool.len())]);
                }
                continue;
            }
            for _ in 0..self.per_domain {
                if self.cursors[d] == pool.len() {
                    pool.shuffle(&mut self.rng);
                    self.cursors[d] = 0;
                }
                batch.push(pool[self.cursors[d]]);
                self.cursors[d] += 1;
            }
        }
        batch
    }
}

impl Iterator for BatchSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// Images and annotations of a batch; `images` is `[B, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn assemble_batch(dataset: &MultiDomainDataset, ids: &[usize]) -> Result<Batch> {
    if ids.is_empty() {
        return Err(invalid("cannot assemble an empty batch"));
    }
    let items: Vec<_> = ids.iter().map(|&id| dataset.get(id)).collect();
    let images: Vec<&Tensor> = items.iter().map(|img| &img.image).collect();
    Ok(Batch {
        images: Tensor::stack(&images)?,
        labels: items.iter().map(|img| img.label).collect(),
        domains: items.iter().map(|img| img.domain).collect(),
        ids: ids.to_vec(),
    })
}
