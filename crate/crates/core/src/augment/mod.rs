//! In-batch style augmentation and the standard crop/flip augmentation.

mod standard;

pub use standard::{horizontal_flip, random_crop_flip, CropFlip};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adain::StyleTransferModel;
use crate::data::{Batch, MultiDomainDataset};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Per-sample replacement probability.
    pub p: f32,
    /// Stylization strength.
    pub alpha: f32,
    pub rng_seed: u64,
}

impl AugmentationPolicy {
    pub fn new(p: f32, alpha: f32, rng_seed: u64) -> Result<Self> {
        let policy = Self { p, alpha, rng_seed };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A batch after augmentation. Labels, domains and ids are those of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub ids: Vec<usize>,
    pub stylized_mask: Vec<bool>,
    /// Batch index of the style image used for each stylized sample.
    pub style_provider: Vec<Option<usize>>,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Uniform draw from `{0, .., batch_size - 1}` without `content_index`.
pub fn pick_style_provider<R: Rng + ?Sized>(batch_size: usize, content_index: usize, rng: &mut R) -> Result<usize> {
    if batch_size < 2 {
        return Err(invalid(format!("a style provider needs a batch of at least 2, got {batch_size}")));
    }
    if content_index >= batch_size {
        return Err(invalid(format!("content index {content_index} outside batch of {batch_size}")));
    }
    let j = rng.random_range(0..batch_size - 1);
    Ok(if j >= content_index { j + 1 } else { j })
}

/// Replaces each sample, with probability `policy.p`, by its stylization
/// with a randomly chosen other sample of the same batch as style.
///
/// Style images are always taken from the incoming batch, never from
/// already-stylized outputs. When no sample is selected the images are
/// returned untouched and the model is not run.
pub fn augment_batch<R: Rng + ?Sized>(
    batch: &Batch,
    model: &StyleTransferModel,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<AugmentedBatch> {
    augment_with(batch, model, policy, rng, |content, style| {
        let c = batch.images.select(content)?;
        let s = batch.images.select(style)?;
        model.stylize(&c, &s, policy.alpha)
    })
}

/// Encoder features of a fixed set of images, looked up by image id.
///
/// The encoder is frozen, so features of the raw training images can be
/// computed once per style model and reused by every batch.
#[derive(Debug, Clone)]
pub struct EncodedImages {
    features: HashMap<usize, Tensor>,
}

impl EncodedImages {
    pub fn new(model: &StyleTransferModel, dataset: &MultiDomainDataset, ids: &[usize], chunk: usize) -> Result<Self> {
        let mut features = HashMap::with_capacity(ids.len());
        for part in ids.chunks(chunk.max(1)) {
            let imgs: Vec<&Tensor> = part.iter().map(|&i| &dataset.get(i).image).collect();
            let f = model.encode(&Tensor::stack(&imgs)?)?;
            for (k, &id) in part.iter().enumerate() {
                features.insert(id, Tensor::new(f.shape()[1..].to_vec(), f.item(k).to_vec())?);
            }
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn gather(&self, ids: &[usize]) -> Result<Tensor> {
        let items = ids
            .iter()
            .map(|id| {
                self.features
                    .get(id)
                    .ok_or_else(|| invalid(format!("image {id} has no cached encoder features")))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}

/// [`augment_batch`] with encoder features taken from `encoded` instead of
/// recomputed; every id of the batch must be present.
pub fn augment_batch_encoded<R: Rng + ?Sized>(
    batch: &Batch,
    model: &StyleTransferModel,
    encoded: &EncodedImages,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<AugmentedBatch> {
    augment_with(batch, model, policy, rng, |content, style| {
        let ids = |idx: &[usize]| idx.iter().map(|&i| batch.ids[i]).collect::<Vec<_>>();
        let f_c = encoded.gather(&ids(content))?;
        let f_s = encoded.gather(&ids(style))?;
        model.stylize_encoded(&f_c, &f_s, policy.alpha)
    })
}

fn augment_with<R: Rng + ?Sized>(
    batch: &Batch,
    model: &StyleTransferModel,
    policy: &AugmentationPolicy,
    rng: &mut R,
    stylize: impl FnOnce(&[usize], &[usize]) -> Result<Tensor>,
) -> Result<AugmentedBatch> {
    policy.validate()?;
    if !model.is_trained() {
        return Err(Error::Untrained);
    }
    let n = batch.len();
    if n < 2 {
        return Err(invalid(format!("style augmentation needs a batch of at least 2, got {n}")));
    }
    let mut mask = vec![false; n];
    let mut provider = vec![None; n];
    for i in 0..n {
        if rng.random::<f32>() < policy.p {
            mask[i] = true;
            provider[i] = Some(pick_style_provider(n, i, rng)?);
        }
    }
    let content_idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let mut images = batch.images.clone();
    if !content_idx.is_empty() {
        let style_idx: Vec<usize> = content_idx.iter().map(|&i| provider[i].unwrap()).collect();
        let out = stylize(&content_idx, &style_idx)?;
        for (k, &i) in content_idx.iter().enumerate() {
            images.item_mut(i).copy_from_slice(out.item(k));
        }
    }
    Ok(AugmentedBatch {
        images,
        labels: batch.labels.clone(),
        domains: batch.domains.clone(),
        ids: batch.ids.clone(),
        stylized_mask: mask,
        style_provider: provider,
    })
}

/// Running counts of what the augmentation did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub batches: usize,
    pub samples: usize,
    pub stylized: usize,
    /// Stylizations whose provider came from a different domain.
    pub cross_domain: usize,
    pub rate: f64,
    /// `cross_domain / stylized`, 0 when nothing was stylized.
    pub cross_domain_fraction: f64,
}

impl AugmentationStats {
    pub fn record(&mut self, batch: &AugmentedBatch) {
        self.batches += 1;
        self.samples += batch.len();
        for (i, &styled) in batch.stylized_mask.iter().enumerate() {
            if !styled {
                continue;
            }
            self.stylized += 1;
            if let Some(j) = batch.style_provider[i] {
                if batch.domains[j] != batch.domains[i] {
                    self.cross_domain += 1;
                }
            }
        }
        self.rate = self.stylized as f64 / self.samples.max(1) as f64;
        self.cross_domain_fraction = if self.stylized == 0 {
            0.0
        } else {
            self.cross_domain as f64 / self.stylized as f64
        };
    }

    /// `[augmentation_stats]` block in TOML syntax, for run logs.
    pub fn to_structured_text(&self) -> String {
        #[derive(Serialize)]
        struct Block<'a> {
            augmentation_stats: &'a AugmentationStats,
        }
        toml::to_string(&Block {
            augmentation_stats: self,
        })
        .expect("plain numeric struct always serializes")
    }
}

pub fn augmentation_stats(history: &[AugmentedBatch]) -> Result<AugmentationStats> {
    if history.is_empty() {
        return Err(invalid("augmentation history is empty"));
    }
    let mut stats = AugmentationStats::default();
    for b in history {
        stats.record(b);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_element_batch_has_one_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(pick_style_provider(2, 0, &mut rng).unwrap(), 1);
            assert_eq!(pick_style_provider(2, 1, &mut rng).unwrap(), 0);
        }
        assert!(pick_style_provider(1, 0, &mut rng).is_err());
    }

    #[test]
    fn never_picks_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..10_000 {
            let i = t % 8;
            assert_ne!(pick_style_provider(8, i, &mut rng).unwrap(), i);
        }
    }

    #[test]
    fn policy_ranges() {
        assert!(AugmentationPolicy::new(0.5, 1.0, 0).is_ok());
        assert!(AugmentationPolicy::new(1.5, 1.0, 0).is_err());
        assert!(AugmentationPolicy::new(0.5, -0.1, 0).is_err());
    }

    fn fake(mask: Vec<bool>, provider: Vec<Option<usize>>, domains: Vec<usize>) -> AugmentedBatch {
        let n = mask.len();
        AugmentedBatch {
            images: Tensor::zeros(&[n, 1, 1, 1]),
            labels: vec![0; n],
            domains,
            ids: (0..n).collect(),
            stylized_mask: mask,
            style_provider: provider,
        }
    }

    #[test]
    fn stats_counts() {
        let a = fake(vec![true, true], vec![Some(1), Some(0)], vec![0, 1]);
        let b = fake(vec![false, true], vec![None, Some(0)], vec![2, 2]);
        let s = augmentation_stats(&[a.clone(), b]).unwrap();
        assert_eq!((s.samples, s.stylized, s.cross_domain), (4, 3, 2));
        assert!((s.rate - 0.75).abs() < 1e-12);
        assert!((s.cross_domain_fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(augmentation_stats(&[a]).unwrap().rate, 1.0);
        assert!(augmentation_stats(&[]).is_err());
        let text = s.to_structured_text();
        assert!(text.starts_with("[augmentation_stats]"), "{text}");
        assert!(text.contains("stylized = 3"));
    }
}
