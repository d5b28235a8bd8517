//! Content and style losses of the style-transfer objective.

use super::stats::{channel_stats, channel_stats_backward};
use crate::error::{shape_err, Result};
use crate::nn::{mse, LossGrad};
use crate::tensor::Tensor;

/// Mean squared error between re-extracted features and their target, with
/// the gradient w.r.t. the re-extracted features.
pub fn content_loss(reextracted: &Tensor, target: &Tensor) -> Result<LossGrad> {
    mse(reextracted, target)
}

#[derive(Debug, Clone)]
pub struct StyleLoss {
    pub loss: f32,
    /// Gradient w.r.t. each output tap.
    pub grads: Vec<Tensor>,
}

/// Sum over taps of `MSE(mu_out, mu_style) + MSE(sigma_out, sigma_style)`,
/// where the MSE averages over samples and channels.
pub fn style_loss(output_taps: &[Tensor], style_taps: &[Tensor], eps: f32) -> Result<StyleLoss> {
    if output_taps.len() != style_taps.len() {
        return Err(shape_err(format!(
            "{} output taps vs {} style taps",
            output_taps.len(),
            style_taps.len()
        )));
    }
    let mut loss = 0.0f64;
    let mut grads = Vec::with_capacity(output_taps.len());
    for (i, (out, style)) in output_taps.iter().zip(style_taps).enumerate() {
        let (bo, co, _, _) = out.dims4()?;
        let (bs, cs, _, _) = style.dims4()?;
        if bo != bs || co != cs {
            return Err(shape_err(format!(
                "tap {i}: output [{bo}, {co}, ..] vs style [{bs}, {cs}, ..]"
            )));
        }
        let so = channel_stats(out, eps)?;
        let ss = channel_stats(style, eps)?;
        let n = so.mu.len() as f32;
        let mut d_mu = Vec::with_capacity(so.mu.len());
        let mut d_sigma = Vec::with_capacity(so.mu.len());
        let mut tap_loss = 0.0f64;
        for k in 0..so.mu.len() {
            let dm = so.mu[k] - ss.mu[k];
            let ds = so.sigma[k] - ss.sigma[k];
            tap_loss += f64::from(dm * dm + ds * ds);
            d_mu.push(2.0 * dm / n);
            d_sigma.push(2.0 * ds / n);
        }
        loss += tap_loss / f64::from(n);
        grads.push(channel_stats_backward(out, &so, &d_mu, &d_sigma)?);
    }
    Ok(StyleLoss {
        loss: loss as f32,
        grads,
    })
}
