//! Classifier training with source-validation model selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::Classifier;
use super::config::{ExperimentConfig, Method};
use crate::adain::StyleTransferModel;
use crate::augment::{augment_batch_encoded, random_crop_flip, EncodedImages, AugmentationPolicy, AugmentationStats};
use crate::baselines::{mixed_loss, mixup_feature, mixup_pairs, mixup_pixel, rotation_batch, sample_mixup_lambda, MixupLevel};
use crate::data::{assemble_batch, BatchSampler, MultiDomainDataset, ProtocolSplit};
use crate::error::{invalid, Error, Result};
use crate::nn::{cross_entropy, Sgd, SgdConfig};
use crate::tensor::Tensor;

/// Independent random streams of one run, all derived from the run seed.
pub(crate) mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const CROP: u64 = 4;
    pub const STYLE: u64 = 5;
    pub const MIXUP: u64 = 6;
    pub const ROTATION: u64 = 7;
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the best validation accuracy; the earliest wins ties.
pub fn select_model(val_curve: &[f64]) -> Result<usize> {
    if val_curve.is_empty() {
        return Err(invalid("validation curve is empty"));
    }
    let mut best = 0;
    for (i, &v) in val_curve.iter().enumerate() {
        if v > val_curve[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    /// The checkpoint picked by source-validation accuracy.
    pub classifier: Classifier,
    /// Iteration (1-based) of every validation evaluation.
    pub val_iterations: Vec<usize>,
    pub val_curve: Vec<f64>,
    pub selected: usize,
    /// Present for stylized training.
    pub augmentation_stats: Option<AugmentationStats>,
    /// Mean training loss over the last validation interval.
    pub final_train_loss: f32,
}

struct StepGrads {
    loss: f32,
    trunk: Vec<Tensor>,
    head: Vec<Tensor>,
    rot_head: Option<Vec<Tensor>>,
}

fn add_into(acc: &mut [Tensor], other: &[Tensor]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_scaled(1.0, b)?;
    }
    Ok(())
}

/// Forward and backward of one batch for the configured method.
fn method_step(
    clf: &Classifier,
    config: &ExperimentConfig,
    x: &Tensor,
    labels: &[usize],
    mix_rng: &mut ChaCha8Rng,
    rot_rng: &mut ChaCha8Rng,
) -> Result<StepGrads> {
    match config.method {
        Method::Baseline => plain_step(clf, x, labels),
        Method::Rotation => {
            let mut step = plain_step(clf, x, labels)?;
            let (xr, rot_labels) = rotation_batch(x, rot_rng)?;
            let f = clf.trunk.forward(&xr, true)?;
            let r = clf.rot_head.forward(&f.output, true)?;
            let ce = cross_entropy(&r.output, &rot_labels)?;
            let mut up = ce.grad;
            up.scale(config.eta);
            let gr = clf.rot_head.backward(&r, &up)?;
            let gt = clf.trunk.backward_with(
                &f,
                crate::nn::Upstream {
                    output: gr.input.as_ref(),
                    taps: &[],
                },
                true,
                false,
            )?;
            add_into(&mut step.trunk, &gt.params)?;
            step.loss = crate::baselines::multitask_loss(step.loss, ce.loss, config.eta);
            step.rot_head = Some(gr.params);
            Ok(step)
        }
        Method::MixupPixel => {
            let lam = sample_mixup_lambda(config.gamma, mix_rng)?;
            if lam == 1.0 {
                return plain_step(clf, x, labels);
            }
            let pairs = mixup_pairs(labels.len(), lam, MixupLevel::Pixel, mix_rng);
            let perm: Vec<usize> = pairs.iter().map(|p| p.index_j).collect();
            let xm = mixup_pixel(x, &x.select(&perm)?, lam)?;
            let yj: Vec<usize> = perm.iter().map(|&j| labels[j]).collect();
            let f = clf.trunk.forward(&xm, true)?;
            let o = clf.head.forward(&f.output, true)?;
            let loss = mixed_loss(&o.output, labels, &yj, lam)?;
            let gh = clf.head.backward(&o, &loss.grad)?;
            let gt = clf.trunk.backward_with(
                &f,
                crate::nn::Upstream {
                    output: gh.input.as_ref(),
                    taps: &[],
                },
                true,
                false,
            )?;
            Ok(StepGrads {
                loss: loss.loss,
                trunk: gt.params,
                head: gh.params,
                rot_head: None,
            })
        }
        Method::MixupFeature => {
            let lam = sample_mixup_lambda(config.gamma, mix_rng)?;
            if lam == 1.0 {
                return plain_step(clf, x, labels);
            }
            let pairs = mixup_pairs(labels.len(), lam, MixupLevel::Feature, mix_rng);
            let perm: Vec<usize> = pairs.iter().map(|p| p.index_j).collect();
            let f = clf.trunk.forward(x, true)?;
            let fm = mixup_feature(&f.output, &f.output.select(&perm)?, lam)?;
            let yj: Vec<usize> = perm.iter().map(|&j| labels[j]).collect();
            let o = clf.head.forward(&fm, true)?;
            let loss = mixed_loss(&o.output, labels, &yj, lam)?;
            let gh = clf.head.backward(&o, &loss.grad)?;
            let d_mix = gh.input.expect("input gradient was requested");
            // d f_i = lam * d_mix_i, d f_perm(i) += (1 - lam) * d_mix_i
            let mut d_f = d_mix.map(|v| lam * v);
            for (i, &j) in perm.iter().enumerate() {
                let src: Vec<f32> = d_mix.item(i).iter().map(|v| (1.0 - lam) * v).collect();
                for (d, s) in d_f.item_mut(j).iter_mut().zip(src) {
                    *d += s;
                }
            }
            let gt = clf.trunk.backward_with(
                &f,
                crate::nn::Upstream {
                    output: Some(&d_f),
                    taps: &[],
                },
                true,
                false,
            )?;
            Ok(StepGrads {
                loss: loss.loss,
                trunk: gt.params,
                head: gh.params,
                rot_head: None,
            })
        }
    }
}

fn plain_step(clf: &Classifier, x: &Tensor, labels: &[usize]) -> Result<StepGrads> {
    let f = clf.trunk.forward(x, true)?;
    let o = clf.head.forward(&f.output, true)?;
    let ce = cross_entropy(&o.output, labels)?;
    let gh = clf.head.backward(&o, &ce.grad)?;
    let gt = clf.trunk.backward_with(
        &f,
        crate::nn::Upstream {
            output: gh.input.as_ref(),
            taps: &[],
        },
        true,
        false,
    )?;
    Ok(StepGrads {
        loss: ce.loss,
        trunk: gt.params,
        head: gh.params,
        rot_head: None,
    })
}

/// Trains a classifier on the source train splits of `split`, evaluating on
/// the pooled source validation ids every `val_every` iterations, and returns
/// the checkpoint with the best validation accuracy.
///
/// Target ids in `split.test` are never read.
pub fn train_classifier(
    dataset: &MultiDomainDataset,
    split: &ProtocolSplit,
    config: &ExperimentConfig,
    style: Option<&StyleTransferModel>,
    seed: u64,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let cc = &config.classifier;
    let mut init_rng = rng_stream(seed, stream::INIT);
    let mut clf = Classifier::new(&cc.arch, dataset.image_shape(), dataset.num_classes(), &mut init_rng)?;
    let mut sampler = BatchSampler::new(split.train_pools(), cc.per_domain, rng_stream(seed, stream::SAMPLER))?;
    let mut crop_rng = rng_stream(seed, stream::CROP);
    let mut style_rng = rng_stream(seed, stream::STYLE);
    let mut mix_rng = rng_stream(seed, stream::MIXUP);
    let mut rot_rng = rng_stream(seed, stream::ROTATION);
    let policy = AugmentationPolicy::new(config.p, config.alpha, seed)?;
    let mut stats = style.map(|_| AugmentationStats::default());
    let val_ids: Vec<usize> = split.val_ids().collect();
    let encoded = match style {
        Some(m) => Some(EncodedImages::new(m, dataset, &split.train_ids().collect::<Vec<_>>(), cc.eval_batch)?),
        None => None,
    };

    let sgd = SgdConfig {
        learning_rate: cc.learning_rate,
        momentum: cc.momentum,
        weight_decay: cc.weight_decay,
    };
    let (mut opt_trunk, mut opt_head, mut opt_rot) = (Sgd::new(sgd), Sgd::new(sgd), Sgd::new(sgd));

    let mut snapshots = Vec::new();
    let mut val_curve = Vec::new();
    let mut val_iterations = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0f64, 0usize);
    let mut final_train_loss = f32::NAN;
    for it in 1..=cc.iterations {
        let batch = assemble_batch(dataset, &sampler.next_batch())?;
        let images = match (style, stats.as_mut()) {
            (Some(model), Some(stats)) => {
                let enc = encoded.as_ref().expect("encoded alongside the style model");
                let aug = augment_batch_encoded(&batch, model, enc, &policy, &mut style_rng)?;
                stats.record(&aug);
                aug.images
            }
            _ => batch.images,
        };
        let x = random_crop_flip(&images, cc.crop_flip, &mut crop_rng)?;
        let step = method_step(&clf, config, &x, &batch.labels, &mut mix_rng, &mut rot_rng).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged(format!("classifier iteration {it}: non-finite values in {what}")),
            other => other,
        })?;
        if !step.loss.is_finite() {
            return Err(Error::Diverged(format!("classifier iteration {it}: loss {}", step.loss)));
        }
        opt_trunk.step(clf.trunk.params_mut(), &step.trunk)?;
        opt_head.step(clf.head.params_mut(), &step.head)?;
        if let Some(g) = &step.rot_head {
            opt_rot.step(clf.rot_head.params_mut(), g)?;
        }
        loss_sum += f64::from(step.loss);
        loss_n += 1;
        if it % cc.val_every == 0 || it == cc.iterations {
            let acc = clf.accuracy(dataset, &val_ids, cc.eval_batch)?;
            final_train_loss = (loss_sum / loss_n as f64) as f32;
            log::debug!("iteration {it}: train loss {final_train_loss:.4}, source val acc {acc:.4}");
            (loss_sum, loss_n) = (0.0, 0);
            val_curve.push(acc);
            val_iterations.push(it);
            snapshots.push(clf.clone());
        }
    }
    let selected = select_model(&val_curve)?;
    Ok(TrainedClassifier {
        classifier: snapshots.swap_remove(selected),
        val_iterations,
        val_curve,
        selected,
        augmentation_stats: stats,
        final_train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_rule() {
        assert_eq!(select_model(&[0.1, 0.2, 0.3]).unwrap(), 2);
        assert_eq!(select_model(&[0.5, 0.9, 0.7]).unwrap(), 1);
        assert_eq!(select_model(&[0.8, 0.8]).unwrap(), 0);
        assert!(select_model(&[]).is_err());
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = rng_stream(7, stream::CROP).random();
        let b: u64 = rng_stream(7, stream::STYLE).random();
        let c: u64 = rng_stream(7, stream::CROP).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
