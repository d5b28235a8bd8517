//! Finite-difference verification of analytic gradients.
//!
//! Everything here runs in `f64` through straight-line reference code that
//! shares nothing with the optimized `f32` kernels in [`crate::nn`], so a bug
//! in those kernels cannot cancel out against the oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adain::{style_objective, StyleTransferModel};
use crate::error::Result;
use crate::nn::{LayerSpec, Network, PadMode, Upstream};
use crate::tensor::Tensor;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], epsilon: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + epsilon;
            let plus = f(&probe);
            probe[i] = orig - epsilon;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// Largest relative error between paired analytic and numeric gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter tensor, element) where the worst error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Fixed pseudo-random projection weights that turn a network output into a
/// scalar loss `sum_j w_j * y_j`.
pub fn projection_weights(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Checks the network's reverse pass against central differences of the
/// `f64` reference forward, for every parameter.
pub fn gradcheck(net: &Network, input: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    gradcheck_with(net, input, epsilon, |net, input, upstream| {
        let fwd = net.forward(input, true)?;
        Ok(net
            .backward_with(
                &fwd,
                Upstream {
                    output: Some(upstream),
                    taps: &[],
                },
                true,
                false,
            )?
            .params)
    })
}

/// As [`gradcheck`], with the analytic gradients supplied by `analytic`
/// (given the network, input, and upstream output gradient).
pub fn gradcheck_with(
    net: &Network,
    input: &Tensor,
    epsilon: f64,
    analytic: impl FnOnce(&Network, &Tensor, &Tensor) -> Result<Vec<Tensor>>,
) -> Result<GradCheckReport> {
    let reference = ReferenceNet::from_network(net);
    let x: Vec<f64> = input.data().iter().map(|&v| f64::from(v)).collect();
    let batch = input.batch();
    let out_len = batch * net.output_shape().iter().product::<usize>();
    let weights = projection_weights(out_len, 0x5eed);

    let mut upstream_shape = vec![batch];
    upstream_shape.extend_from_slice(net.output_shape());
    let upstream = Tensor::new(upstream_shape, weights.iter().map(|&w| w as f32).collect())?;
    let grads = analytic(net, input, &upstream)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut params = reference.params.clone();
    for (t, grad) in grads.iter().enumerate().take(params.len()) {
        for e in 0..params[t].len() {
            let orig = params[t][e];
            params[t][e] = orig + epsilon;
            let plus = dot(&reference.forward_with(&params, &x, batch).output, &weights);
            params[t][e] = orig - epsilon;
            let minus = dot(&reference.forward_with(&params, &x, batch).output, &weights);
            params[t][e] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(f64::from(grad.data()[e]), numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (t, e);
            }
        }
    }
    if grads.len() != params.len() {
        // A missing gradient tensor is as wrong as it gets.
        report.max_rel_error = f64::INFINITY;
    }
    Ok(report)
}

/// `f64` re-evaluation of the style-transfer objective as a function of the
/// decoder parameters, sharing no code with [`crate::adain`].
struct StyleObjectiveRef {
    enc: ReferenceNet,
    dec: ReferenceNet,
    taps: Vec<usize>,
    tap_shapes: Vec<Vec<usize>>,
    target: Vec<f64>,
    style_taps: Vec<Vec<f64>>,
    batch: usize,
    lambda: f64,
    eps: f64,
}

impl StyleObjectiveRef {
    fn new(model: &StyleTransferModel, content: &Tensor, style: &Tensor) -> Self {
        let to64 = |t: &Tensor| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        let enc = ReferenceNet::from_network(&model.encoder);
        let dec = ReferenceNet::from_network(&model.decoder);
        let batch = content.batch();
        let taps = model.encoder.taps().to_vec();
        let tap_shapes = taps.iter().map(|&t| model.encoder.layer_output_shape(t).to_vec()).collect();
        let eps = f64::from(model.eps);
        let fc = enc.forward_with(&enc.params, &to64(content), batch).output;
        let s = enc.forward_taps(&enc.params, &to64(style), batch, &taps);
        let out = model.encoder.output_shape();
        let hw = out[1] * out[2];
        let target = reference::adain(&fc, &s.output, batch, out[0], hw, hw, eps);
        Self {
            enc,
            dec,
            taps,
            tap_shapes,
            target,
            style_taps: s.taps,
            batch,
            lambda: f64::from(model.lambda_s),
            eps,
        }
    }

    /// Objective value and the kink margin of the decoder and re-encoding.
    fn eval(&self, dec_params: &[Vec<f64>]) -> (f64, f64) {
        let img = self.dec.forward_with(dec_params, &self.target, self.batch);
        let re = self.enc.forward_taps(&self.enc.params, &img.output, self.batch, &self.taps);
        let lc = reference::mse(&re.output, &self.target);
        let taps: Vec<_> = self
            .tap_shapes
            .iter()
            .enumerate()
            .map(|(k, sh)| {
                let hw = sh[1] * sh[2];
                (&re.taps[k][..], &self.style_taps[k][..], self.batch, sh[0], hw, hw)
            })
            .collect();
        let ls = reference::style_loss(&taps, self.eps);
        (lc + self.lambda * ls, img.kink_margin.min(re.kink_margin))
    }
}

/// Smallest ReLU/max-pool kink distance along the style objective's forward
/// path (decoder, then re-encoding).
pub fn style_objective_kink_margin(model: &StyleTransferModel, content: &Tensor, style: &Tensor) -> f64 {
    let r = StyleObjectiveRef::new(model, content, style);
    r.eval(&r.dec.params).1
}

/// Checks the decoder gradient of `L_c + lambda * L_s` (with the AdaIN
/// target held constant) against central differences of an `f64`
/// re-evaluation through the frozen encoder, for every decoder parameter.
pub fn gradcheck_style_objective(
    model: &StyleTransferModel,
    content: &Tensor,
    style: &Tensor,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let analytic = style_objective(model, content, style)?.decoder_grads;
    let r = StyleObjectiveRef::new(model, content, style);
    let mut params = r.dec.params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (t, grad) in analytic.iter().enumerate().take(params.len()) {
        for e in 0..params[t].len() {
            let orig = params[t][e];
            params[t][e] = orig + epsilon;
            let plus = r.eval(&params).0;
            params[t][e] = orig - epsilon;
            let minus = r.eval(&params).0;
            params[t][e] = orig;
            let err = relative_error(f64::from(grad.data()[e]), (plus - minus) / (2.0 * epsilon));
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (t, e);
            }
        }
    }
    if analytic.len() != params.len() {
        report.max_rel_error = f64::INFINITY;
    }
    Ok(report)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest distance of any ReLU input from zero and any max-pool winner from
/// its runner-up. Finite differences are only meaningful when this margin is
/// comfortably larger than the perturbation.
pub fn kink_margin(net: &Network, input: &Tensor) -> f64 {
    let reference = ReferenceNet::from_network(net);
    let x: Vec<f64> = input.data().iter().map(|&v| f64::from(v)).collect();
    reference
        .forward_with(&reference.params, &x, input.batch())
        .kink_margin
}

/// `f64` re-implementation of a [`Network`] forward pass.
#[derive(Debug, Clone)]
pub struct ReferenceNet {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    /// Parameters per tensor, same order as [`Network::params`].
    pub params: Vec<Vec<f64>>,
}

pub struct ReferenceOutput {
    pub output: Vec<f64>,
    /// Tap activations in tap order (only when taps were requested).
    pub taps: Vec<Vec<f64>>,
    pub kink_margin: f64,
}

impl ReferenceNet {
    pub fn from_network(net: &Network) -> Self {
        Self {
            layers: net.layers().to_vec(),
            input_shape: net.input_shape().to_vec(),
            params: net
                .params()
                .iter()
                .map(|p| p.data().iter().map(|&v| f64::from(v)).collect())
                .collect(),
        }
    }

    pub fn forward_with(&self, params: &[Vec<f64>], input: &[f64], batch: usize) -> ReferenceOutput {
        self.forward_taps(params, input, batch, &[])
    }

    pub fn forward_taps(
        &self,
        params: &[Vec<f64>],
        input: &[f64],
        batch: usize,
        taps: &[usize],
    ) -> ReferenceOutput {
        let mut shape = self.input_shape.clone();
        let mut x = input.to_vec();
        let mut margin = f64::INFINITY;
        let mut p = 0;
        let mut tap_out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    pad_mode,
                } => {
                    let (h, w) = (shape[1], shape[2]);
                    let ho = (h + 2 * padding - kernel) / stride + 1;
                    let wo = (w + 2 * padding - kernel) / stride + 1;
                    let (wt, bias) = (&params[p], &params[p + 1]);
                    p += 2;
                    let mut y = vec![0.0; batch * out_channels * ho * wo];
                    for b in 0..batch {
                        for o in 0..out_channels {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let mut acc = bias[o];
                                    for c in 0..in_channels {
                                        for u in 0..kernel {
                                            for v in 0..kernel {
                                                let r = (i * stride + u) as i64 - padding as i64;
                                                let s = (j * stride + v) as i64 - padding as i64;
                                                let (Some(r), Some(s)) =
                                                    (pad_coord(r, h, pad_mode), pad_coord(s, w, pad_mode))
                                                else {
                                                    continue;
                                                };
                                                acc += wt[((o * in_channels + c) * kernel + u) * kernel + v]
                                                    * x[((b * in_channels + c) * h + r) * w + s];
                                            }
                                        }
                                    }
                                    y[((b * out_channels + o) * ho + i) * wo + j] = acc;
                                }
                            }
                        }
                    }
                    x = y;
                    shape = vec![out_channels, ho, wo];
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let (wt, bias) = (&params[p], &params[p + 1]);
                    p += 2;
                    let mut y = vec![0.0; batch * out_features];
                    for b in 0..batch {
                        for o in 0..out_features {
                            y[b * out_features + o] = bias[o]
                                + (0..in_features)
                                    .map(|i| wt[o * in_features + i] * x[b * in_features + i])
                                    .sum::<f64>();
                        }
                    }
                    x = y;
                    shape = vec![out_features];
                }
                LayerSpec::Relu => {
                    for v in &mut x {
                        margin = margin.min(v.abs());
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                LayerSpec::Sigmoid => {
                    for v in &mut x {
                        *v = 1.0 / (1.0 + (-*v).exp());
                    }
                }
                LayerSpec::MaxPool2d { size } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (ho, wo) = (h / size, w / size);
                    let mut y = Vec::with_capacity(batch * c * ho * wo);
                    for plane in 0..batch * c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let mut vals: Vec<f64> = (0..size * size)
                                    .map(|k| x[plane * h * w + (i * size + k / size) * w + j * size + k % size])
                                    .collect();
                                vals.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
                                // a tie of relu-clamped zeros stays a tie under perturbation
                                if vals.len() > 1 && !(vals[0] == 0.0 && vals[1] == 0.0) {
                                    margin = margin.min(vals[0] - vals[1]);
                                }
                                y.push(vals[0]);
                            }
                        }
                    }
                    x = y;
                    shape = vec![c, ho, wo];
                }
                LayerSpec::Upsample { scale } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let mut y = Vec::with_capacity(x.len() * scale * scale);
                    for plane in 0..batch * c {
                        for i in 0..h * scale {
                            for j in 0..w * scale {
                                y.push(x[plane * h * w + (i / scale) * w + j / scale]);
                            }
                        }
                    }
                    x = y;
                    shape = vec![c, h * scale, w * scale];
                }
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                }
            }
            if taps.contains(&li) {
                tap_out.push(x.clone());
            }
        }
        ReferenceOutput {
            output: x,
            taps: tap_out,
            kink_margin: margin,
        }
    }
}

fn pad_coord(i: i64, len: usize, mode: PadMode) -> Option<usize> {
    let n = len as i64;
    if i >= 0 && i < n {
        Some(i as usize)
    } else if mode == PadMode::Reflect {
        // mirror without repeating the edge sample
        Some(if i < 0 { (-i) as usize } else { (2 * n - 2 - i) as usize })
    } else {
        None
    }
}

/// `f64` reference implementations of the style-transfer statistics and
/// losses, written independently of [`crate::adain`].
pub mod reference {
    /// Per-(sample, channel) spatial mean and `sqrt(var + eps)` for a flat
    /// `[B, C, H, W]` buffer.
    pub fn channel_stats(f: &[f64], b: usize, c: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let mut mu = Vec::with_capacity(b * c);
        let mut sigma = Vec::with_capacity(b * c);
        for plane in f.chunks(hw).take(b * c) {
            let m = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw as f64;
            mu.push(m);
            sigma.push((var + eps).sqrt());
        }
        (mu, sigma)
    }

    /// `sigma_s * (f_c - mu_c) / sigma_c + mu_s`, per channel.
    #[allow(clippy::too_many_arguments)]
    pub fn adain(
        fc: &[f64],
        fs: &[f64],
        b: usize,
        c: usize,
        hw_c: usize,
        hw_s: usize,
        eps: f64,
    ) -> Vec<f64> {
        let (mc, sc) = channel_stats(fc, b, c, hw_c, eps);
        let (ms, ss) = channel_stats(fs, b, c, hw_s, eps);
        let mut out = vec![0.0; fc.len()];
        for k in 0..b * c {
            for i in 0..hw_c {
                out[k * hw_c + i] = ss[k] * (fc[k * hw_c + i] - mc[k]) / sc[k] + ms[k];
            }
        }
        out
    }

    pub fn mse(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    }

    /// Sum over taps of MSE between means plus MSE between deviations.
    /// Each tap is `(output, style, batch, channels, output_hw, style_hw)`.
    pub fn style_loss(taps: &[(&[f64], &[f64], usize, usize, usize, usize)], eps: f64) -> f64 {
        taps.iter()
            .map(|&(out, style, b, c, hw_o, hw_s)| {
                let (mo, so) = channel_stats(out, b, c, hw_o, eps);
                let (ms, ss) = channel_stats(style, b, c, hw_s, eps);
                mse(&mo, &ms) + mse(&so, &ss)
            })
            .sum()
    }
}
