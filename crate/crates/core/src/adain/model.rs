//! Encoder-decoder style transfer model.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::{adain, interpolate_features, DEFAULT_EPS};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{Checkpoint, LayerSpec, Network, PadMode};
use crate::tensor::Tensor;

/// Default style-loss weight.
pub const DEFAULT_LAMBDA: f32 = 10.0;

/// Channel widths of the three encoder blocks; the decoder mirrors them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleArch {
    pub channels: [usize; 3],
    /// Number of 2x max-pool stages (1 or 2), after the first blocks.
    pub downsample: usize,
    /// Side length of the square RGB input.
    pub resolution: usize,
}

impl Default for StyleArch {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            downsample: 1,
            resolution: 32,
        }
    }
}

impl StyleArch {
    /// Three reflect-padded conv-relu blocks with max-pooling after the first
    /// `downsample` of them. Every relu is a tap.
    pub fn encoder_layers(&self) -> (Vec<LayerSpec>, Vec<usize>) {
        let [c1, c2, c3] = self.channels;
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        for (i, (cin, cout)) in [(3, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
            layers.push(LayerSpec::conv3x3(cin, cout, PadMode::Reflect));
            layers.push(LayerSpec::Relu);
            taps.push(layers.len() - 1);
            if i < self.downsample {
                layers.push(LayerSpec::MaxPool2d { size: 2 });
            }
        }
        (layers, taps)
    }

    /// Mirror of the encoder with nearest-neighbour upsampling and a sigmoid
    /// output, so decoded images always lie in `(0, 1)`.
    pub fn decoder_layers(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.channels;
        let mut layers = Vec::new();
        for (i, (cin, cout)) in [(c3, c2), (c2, c1), (c1, c1)].into_iter().enumerate() {
            layers.push(LayerSpec::conv3x3(cin, cout, PadMode::Reflect));
            layers.push(LayerSpec::Relu);
            // block i of the decoder undoes encoder pool 2 - i
            if 2 - i <= self.downsample && i < 2 {
                layers.push(LayerSpec::Upsample { scale: 2 });
            }
        }
        layers.push(LayerSpec::conv3x3(c1, 3, PadMode::Reflect));
        layers.push(LayerSpec::Sigmoid);
        layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(invalid("style model channel widths must be positive"));
        }
        if !(1..=2).contains(&self.downsample) {
            return Err(invalid(format!("downsample must be 1 or 2, got {}", self.downsample)));
        }
        let step = 1 << self.downsample;
        if self.resolution < 4 * step || self.resolution % step != 0 {
            return Err(invalid(format!(
                "style model resolution must be a multiple of {step} and at least {}, got {}",
                4 * step,
                self.resolution
            )));
        }
        Ok(())
    }
}

/// The frozen encoder, the trainable decoder and the loss settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTransferModel {
    pub encoder: Network,
    pub decoder: Network,
    pub lambda_s: f32,
    pub eps: f32,
    trained: bool,
}

impl StyleTransferModel {
    /// Freshly initialised, untrained model.
    pub fn new<R: Rng + ?Sized>(arch: &StyleArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (layers, taps) = arch.encoder_layers();
        let encoder = Network::new(&[3, arch.resolution, arch.resolution], layers, taps, rng)?;
        let decoder = Network::new(encoder.output_shape(), arch.decoder_layers(), vec![], rng)?;
        Self::from_networks(encoder, decoder, DEFAULT_LAMBDA, DEFAULT_EPS, false)
    }

    pub fn from_networks(encoder: Network, decoder: Network, lambda_s: f32, eps: f32, trained: bool) -> Result<Self> {
        if decoder.input_shape() != encoder.output_shape() {
            return Err(shape_err(format!(
                "decoder input {:?} does not match encoder output {:?}",
                decoder.input_shape(),
                encoder.output_shape()
            )));
        }
        if decoder.output_shape() != encoder.input_shape() {
            return Err(shape_err(format!(
                "decoder output {:?} does not match encoder input {:?}",
                decoder.output_shape(),
                encoder.input_shape()
            )));
        }
        if encoder.taps().is_empty() {
            return Err(invalid("encoder needs at least one tap point for the style loss"));
        }
        if !(lambda_s >= 0.0 && lambda_s.is_finite()) || !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid(format!("invalid lambda {lambda_s} or eps {eps}")));
        }
        Ok(Self {
            encoder,
            decoder,
            lambda_s,
            eps,
            trained,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    /// Per-image shape the model accepts and produces.
    pub fn image_shape(&self) -> &[usize] {
        self.encoder.input_shape()
    }

    /// Decoder input `(1 - alpha) f_c + alpha * adain(f_c, f_s)` for paired
    /// batches (or a single style image shared by every content image).
    pub fn decoder_input(&self, content: &Tensor, style: &Tensor, alpha: f32) -> Result<Tensor> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let f_c = self.encoder.infer(content)?;
        if alpha == 0.0 {
            return Ok(f_c);
        }
        let f_s = self.encoder.infer(style)?;
        let f_cs = adain(&f_c, &f_s, self.eps)?;
        interpolate_features(&f_c, &f_cs, alpha)
    }

    /// Stylizes `content` with `style`, returning images clamped to `[0, 1]`.
    pub fn stylize(&self, content: &Tensor, style: &Tensor, alpha: f32) -> Result<Tensor> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let batched = as_batch(content, self.image_shape())?;
        let style = as_batch(style, self.image_shape())?;
        let t = self.decoder_input(&batched, &style, alpha)?;
        let out = self.decoder.infer(&t)?.map(|v| v.clamp(0.0, 1.0));
        out.reshape(content.shape())
    }

    /// Encoder output for a `[B, C, H, W]` batch.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.encoder.infer(images)
    }

    /// Same as [`stylize`](Self::stylize) for already encoded batches.
    pub fn stylize_encoded(&self, f_c: &Tensor, f_s: &Tensor, alpha: f32) -> Result<Tensor> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let t = if alpha == 0.0 {
            f_c.clone()
        } else {
            interpolate_features(f_c, &adain(f_c, f_s, self.eps)?, alpha)?
        };
        Ok(self.decoder.infer(&t)?.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "style-transfer");
        ck.set_meta("lambda_s", self.lambda_s);
        ck.set_meta("eps", self.eps);
        ck.set_meta("trained", self.trained);
        let taps: Vec<String> = self.encoder.taps().iter().map(|t| t.to_string()).collect();
        ck.set_meta("style_taps", taps.join(","));
        ck.add_network("encoder", self.encoder.clone());
        ck.add_network("decoder", self.decoder.clone());
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("style-transfer") {
            return Err(Error::Checkpoint("not a style-transfer checkpoint".into()));
        }
        let lambda_s = ck.meta_parse("lambda_s")?;
        let eps = ck.meta_parse("eps")?;
        let trained = ck.meta_parse("trained")?;
        let encoder = ck.take_network("encoder")?;
        let decoder = ck.take_network("decoder")?;
        Self::from_networks(encoder, decoder, lambda_s, eps, trained)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// Accepts `[C, H, W]` or `[B, C, H, W]` and returns the batched form.
fn as_batch(t: &Tensor, item_shape: &[usize]) -> Result<Tensor> {
    if t.shape() == item_shape {
        let mut shape = vec![1];
        shape.extend_from_slice(item_shape);
        return t.clone().reshape(&shape);
    }
    if t.ndim() == item_shape.len() + 1 && &t.shape()[1..] == item_shape {
        return Ok(t.clone());
    }
    Err(shape_err(format!(
        "expected images of shape {item_shape:?}, got {:?}",
        t.shape()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> StyleTransferModel {
        let arch = StyleArch {
            channels: [4, 6, 8],
            downsample: 2,
            resolution: 16,
        };
        StyleTransferModel::new(&arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn shapes_line_up() {
        let m = model();
        assert_eq!(m.decoder.output_shape(), m.encoder.input_shape());
        assert_eq!(m.encoder.output_shape(), &[8, 4, 4]);
        assert_eq!(m.encoder.taps(), &[1, 4, 7]);
    }

    #[test]
    fn untrained_model_refuses_to_stylize() {
        let m = model();
        let x = Tensor::full(&[1, 3, 16, 16], 0.5);
        assert!(matches!(m.stylize(&x, &x, 1.0), Err(Error::Untrained)));
    }

    #[test]
    fn output_is_clamped_and_shaped() {
        let mut m = model();
        m.set_trained(true);
        let x = Tensor::from_fn(&[3, 16, 16], |i| (i % 7) as f32 / 7.0);
        let y = Tensor::from_fn(&[3, 16, 16], |i| (i % 5) as f32 / 5.0);
        let out = m.stylize(&x, &y, 0.7).unwrap();
        assert_eq!(out.shape(), &[3, 16, 16]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.stylize(&Tensor::zeros(&[3, 8, 8]), &y, 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model();
        m.lambda_s = 3.5;
        m.set_trained(true);
        let mut buf = Vec::new();
        m.to_checkpoint().write_to(&mut buf).unwrap();
        let back = StyleTransferModel::from_checkpoint(Checkpoint::read_from(&buf[..]).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let m = model();
        let bad = StyleTransferModel::from_networks(m.decoder.clone(), m.encoder.clone(), 10.0, 1e-5, false);
        assert!(bad.is_err());
    }
}
