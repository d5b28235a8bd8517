//! Style-model training: encoder pretraining, then decoder training on
//! `L_A = L_c + lambda * L_s` with the encoder frozen.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{content_loss, style_loss};
use super::model::{StyleArch, StyleTransferModel, DEFAULT_LAMBDA};
use super::stats::{adain, DEFAULT_EPS};
use crate::data::LabeledImage;
use crate::error::{invalid, Error, Result};
use crate::nn::{argmax_rows, cross_entropy, Adam, AdamConfig, LayerSpec, Network, Sgd, SgdConfig, Upstream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleOptimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleTrainConfig {
    pub arch: StyleArch,
    pub epochs: usize,
    pub learning_rate: f32,
    pub optimizer: StyleOptimizer,
    /// Only used by SGD.
    pub momentum: f32,
    pub batch_size: usize,
    pub lambda_s: f32,
    pub eps: f32,
    /// Iterations of source-classification pretraining of the encoder;
    /// 0 keeps the random initialisation.
    pub pretrain_iterations: usize,
    pub pretrain_learning_rate: f32,
    pub pretrain_batch_size: usize,
    /// Caps the number of content images visited per epoch.
    pub images_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for StyleTrainConfig {
    fn default() -> Self {
        Self {
            arch: StyleArch::default(),
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: StyleOptimizer::Adam,
            momentum: 0.9,
            batch_size: 8,
            lambda_s: DEFAULT_LAMBDA,
            eps: DEFAULT_EPS,
            pretrain_iterations: 100,
            pretrain_learning_rate: 0.002,
            pretrain_batch_size: 32,
            images_per_epoch: None,
            seed: 0,
        }
    }
}

impl StyleTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return Err(invalid("epochs and batch sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lambda_s >= 0.0 && self.eps >= 0.0) {
            return Err(invalid("lambda_s and eps must be non-negative"));
        }
        if self.images_per_epoch == Some(0) {
            return Err(invalid("images_per_epoch must be positive"));
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f32,
    pub content: f32,
    pub style: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleTrainReport {
    pub epochs: Vec<EpochLoss>,
    /// Training-batch accuracy of the pretraining classifier at its last step.
    pub pretrain_accuracy: Option<f32>,
}

/// Value and decoder gradient of the training objective on one batch.
#[derive(Debug, Clone)]
pub struct StyleObjective {
    pub total: f32,
    pub content: f32,
    pub style: f32,
    pub decoder_grads: Vec<Tensor>,
}

/// Evaluates `L_c + lambda * L_s` for paired content/style batches.
///
/// The AdaIN target `t = adain(E(content), E(style))` is a constant; gradients
/// flow back through the frozen encoder into the decoder only.
pub fn style_objective(model: &StyleTransferModel, content: &Tensor, style: &Tensor) -> Result<StyleObjective> {
    let enc = &model.encoder;
    let f_c = enc.infer(content)?;
    let s = enc.forward(style, false)?;
    let t = adain(&f_c, &s.output, model.eps)?;
    let dec = model.decoder.forward(&t, true)?;
    let re = enc.forward(&dec.output, true)?;
    let lc = content_loss(&re.output, &t)?;
    let ls = style_loss(&re.taps, &s.taps, model.eps)?;
    let mut tap_grads = ls.grads;
    for g in &mut tap_grads {
        g.scale(model.lambda_s);
    }
    let taps: Vec<Option<&Tensor>> = tap_grads.iter().map(Some).collect();
    let up = Upstream {
        output: Some(&lc.grad),
        taps: &taps,
    };
    let d_img = enc
        .backward_with(&re, up, false, true)?
        .input
        .expect("input gradient was requested");
    let grads = model.decoder.backward_with(
        &dec,
        Upstream {
            output: Some(&d_img),
            taps: &[],
        },
        true,
        false,
    )?;
    Ok(StyleObjective {
        total: lc.loss + model.lambda_s * ls.loss,
        content: lc.loss,
        style: ls.loss,
        decoder_grads: grads.params,
    })
}

fn diverged(context: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Diverged(format!("{context}: non-finite values in {what}")),
        other => other,
    }
}

/// Trains the encoder briefly as a source classifier; returns the encoder
/// parameters and the final batch accuracy.
fn pretrain_encoder(
    model: &mut StyleTransferModel,
    sources: &[&LabeledImage],
    num_classes: usize,
    config: &StyleTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f32> {
    let enc = &model.encoder;
    let mut layers = enc.layers().to_vec();
    let feat: usize = enc.output_shape().iter().product();
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::linear(feat, num_classes));
    let mut net = Network::new(enc.input_shape(), layers, vec![], rng)?;
    let n_enc = enc.params().len();
    net.params_mut()[..n_enc].clone_from_slice(enc.params());
    let mut opt = Sgd::new(SgdConfig {
        learning_rate: config.pretrain_learning_rate,
        momentum: 0.9,
        weight_decay: 1e-4,
    });
    let mut acc = 0.0;
    for it in 0..config.pretrain_iterations {
        let picks: Vec<&LabeledImage> = (0..config.pretrain_batch_size)
            .map(|_| sources[rng.random_range(0..sources.len())])
            .collect();
        let x = Tensor::stack(&picks.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let labels: Vec<usize> = picks.iter().map(|s| s.label).collect();
        let ctx = format!("encoder pretraining iteration {it}");
        let fwd = net.forward(&x, true).map_err(diverged(ctx.clone()))?;
        let loss = cross_entropy(&fwd.output, &labels)?;
        if !loss.loss.is_finite() {
            return Err(Error::Diverged(format!("{ctx}: loss {}", loss.loss)));
        }
        let correct = argmax_rows(&fwd.output).iter().zip(&labels).filter(|(a, b)| a == b).count();
        acc = correct as f32 / labels.len() as f32;
        let g = net.backward(&fwd, &loss.grad).map_err(diverged(ctx))?;
        opt.step(net.params_mut(), &g.params)?;
    }
    let params = net.params()[..n_enc].to_vec();
    let (shape, layers, taps) = (enc.input_shape().to_vec(), enc.layers().to_vec(), enc.taps().to_vec());
    model.encoder = Network::from_parts(&shape, layers, taps, params)?;
    Ok(acc)
}

enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

/// Trains a style model on source images. `num_classes` is used only for
/// encoder pretraining.
///
/// Each content image is paired with a style image drawn uniformly from the
/// other source images.
pub fn train_style_model(
    sources: &[&LabeledImage],
    num_classes: usize,
    config: &StyleTrainConfig,
) -> Result<(StyleTransferModel, StyleTrainReport)> {
    config.validate()?;
    if sources.len() < 2 {
        return Err(invalid(format!(
            "style training needs at least 2 source images, got {}",
            sources.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = StyleTransferModel::new(&config.arch, &mut rng)?;
    model.lambda_s = config.lambda_s;
    model.eps = config.eps;
    let item_shape = model.image_shape().to_vec();
    if let Some(bad) = sources.iter().find(|s| s.image.shape() != item_shape.as_slice()) {
        return Err(Error::Shape(format!(
            "source image {} has shape {:?}, model expects {item_shape:?}",
            bad.id,
            bad.image.shape()
        )));
    }

    let pretrain_accuracy = if config.pretrain_iterations > 0 && num_classes >= 2 {
        let acc = pretrain_encoder(&mut model, sources, num_classes, config, &mut rng)?;
        log::info!("encoder pretraining: final batch accuracy {acc:.3}");
        Some(acc)
    } else {
        None
    };

    let mut opt = match config.optimizer {
        StyleOptimizer::Sgd => Optimizer::Sgd(Sgd::new(SgdConfig {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            weight_decay: 0.0,
        })),
        StyleOptimizer::Adam => Optimizer::Adam(Adam::new(AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        })),
    };
    let n = sources.len();
    let per_epoch = config.images_per_epoch.map_or(n, |c| c.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_t, mut sum_c, mut sum_s, mut steps) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for (b, chunk) in order[..per_epoch].chunks(config.batch_size).enumerate() {
            let styles: Vec<usize> = chunk
                .iter()
                .map(|&i| {
                    let j = rng.random_range(0..n - 1);
                    if j >= i {
                        j + 1
                    } else {
                        j
                    }
                })
                .collect();
            let content = Tensor::stack(&chunk.iter().map(|&i| &sources[i].image).collect::<Vec<_>>())?;
            let style = Tensor::stack(&styles.iter().map(|&i| &sources[i].image).collect::<Vec<_>>())?;
            let ctx = format!("style training epoch {epoch} batch {b}");
            let obj = style_objective(&model, &content, &style).map_err(diverged(ctx.clone()))?;
            if !obj.total.is_finite() {
                return Err(Error::Diverged(format!("{ctx}: L_A = {}", obj.total)));
            }
            opt.step(model.decoder.params_mut(), &obj.decoder_grads)?;
            sum_t += f64::from(obj.total);
            sum_c += f64::from(obj.content);
            sum_s += f64::from(obj.style);
            steps += 1;
        }
        let e = EpochLoss {
            total: (sum_t / steps as f64) as f32,
            content: (sum_c / steps as f64) as f32,
            style: (sum_s / steps as f64) as f32,
        };
        log::info!(
            "style epoch {epoch}: L_A {:.5} (L_c {:.5}, L_s {:.5})",
            e.total,
            e.content,
            e.style
        );
        epochs.push(e);
    }
    model.set_trained(true);
    Ok((
        model,
        StyleTrainReport {
            epochs,
            pretrain_accuracy,
        },
    ))
}
