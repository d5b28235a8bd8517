//! Channel statistics and adaptive instance normalization.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Variance-stabilising constant added under the square root.
pub const DEFAULT_EPS: f32 = 1e-5;

/// Per-sample, per-channel spatial mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub batch: usize,
    pub channels: usize,
    /// `[batch * channels]`, sample-major.
    pub mu: Vec<f32>,
    /// `sqrt(population variance + eps)`, same layout as `mu`.
    pub sigma: Vec<f32>,
}

pub fn channel_stats(f: &Tensor, eps: f32) -> Result<ChannelStats> {
    let (b, c, h, w) = f.dims4()?;
    let hw = h * w;
    if hw == 0 {
        return Err(shape_err("channel statistics need a non-empty spatial extent"));
    }
    if eps < 0.0 {
        return Err(invalid(format!("eps must be non-negative, got {eps}")));
    }
    let mut mu = Vec::with_capacity(b * c);
    let mut sigma = Vec::with_capacity(b * c);
    for plane in f.data().chunks_exact(hw) {
        let mean = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / hw as f64;
        let var = plane
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / hw as f64;
        mu.push(mean as f32);
        sigma.push((var + f64::from(eps)).sqrt() as f32);
    }
    Ok(ChannelStats {
        batch: b,
        channels: c,
        mu,
        sigma,
    })
}

/// Gradient w.r.t. `f` of a loss with gradients `d_mu`, `d_sigma` on its stats.
pub fn channel_stats_backward(f: &Tensor, stats: &ChannelStats, d_mu: &[f32], d_sigma: &[f32]) -> Result<Tensor> {
    let (b, c, h, w) = f.dims4()?;
    let hw = h * w;
    if d_mu.len() != b * c || d_sigma.len() != b * c || stats.mu.len() != b * c {
        return Err(shape_err("statistic gradients do not match the feature map"));
    }
    let n = hw as f32;
    let mut out = vec![0.0; f.len()];
    for (k, (src, dst)) in f.data().chunks_exact(hw).zip(out.chunks_exact_mut(hw)).enumerate() {
        let (m, s) = (stats.mu[k], stats.sigma[k]);
        let a = d_mu[k] / n;
        let bcoef = d_sigma[k] / (n * s);
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = a + bcoef * (x - m);
        }
    }
    Ok(Tensor::from_parts(f.shape().to_vec(), out))
}

fn check_pair(f_c: &Tensor, f_s: &Tensor) -> Result<()> {
    let (bc, cc, _, _) = f_c.dims4()?;
    let (bs, cs, _, _) = f_s.dims4()?;
    if cc != cs {
        return Err(shape_err(format!(
            "content has {cc} channels but style has {cs}"
        )));
    }
    if bs != bc && bs != 1 {
        return Err(shape_err(format!(
            "style batch {bs} must equal content batch {bc} or be 1"
        )));
    }
    Ok(())
}

/// Index into style statistics for content sample `b`, channel `ch`.
fn style_index(style: &ChannelStats, b: usize, ch: usize) -> usize {
    let b = if style.batch == 1 { 0 } else { b };
    b * style.channels + ch
}

/// `sigma(f_s) * (f_c - mu(f_c)) / sigma(f_c) + mu(f_s)`, channel-wise.
///
/// Content sample `i` is paired with style sample `i` (or the single style
/// sample when `f_s` has batch 1). Spatial sizes may differ; the output has
/// the shape of `f_c`.
pub fn adain(f_c: &Tensor, f_s: &Tensor, eps: f32) -> Result<Tensor> {
    check_pair(f_c, f_s)?;
    let (b, c, h, w) = f_c.dims4()?;
    let hw = h * w;
    let cs = channel_stats(f_c, eps)?;
    let ss = channel_stats(f_s, eps)?;
    let mut out = vec![0.0; f_c.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = bi * c + ch;
            let j = style_index(&ss, bi, ch);
            let scale = ss.sigma[j] / cs.sigma[k];
            let (mc, ms) = (cs.mu[k], ss.mu[j]);
            for (o, &x) in out[k * hw..(k + 1) * hw].iter_mut().zip(&f_c.data()[k * hw..(k + 1) * hw]) {
                *o = scale * (x - mc) + ms;
            }
        }
    }
    Ok(Tensor::from_parts(f_c.shape().to_vec(), out))
}

/// Gradients of a loss w.r.t. the content and style inputs of [`adain`].
pub fn adain_backward(f_c: &Tensor, f_s: &Tensor, eps: f32, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    check_pair(f_c, f_s)?;
    f_c.expect_same_shape(d_out, "adain_backward")?;
    let (b, c, h, w) = f_c.dims4()?;
    let hw = h * w;
    let n = hw as f32;
    let cs = channel_stats(f_c, eps)?;
    let ss = channel_stats(f_s, eps)?;
    let mut d_c = vec![0.0; f_c.len()];
    let mut d_mu_s = vec![0.0; ss.mu.len()];
    let mut d_sigma_s = vec![0.0; ss.mu.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = bi * c + ch;
            let j = style_index(&ss, bi, ch);
            let (mc, sc) = (cs.mu[k], cs.sigma[k]);
            let x = &f_c.data()[k * hw..(k + 1) * hw];
            let g = &d_out.data()[k * hw..(k + 1) * hw];
            let (mut sum_g, mut sum_gx) = (0.0f32, 0.0f32);
            for (&xi, &gi) in x.iter().zip(g) {
                let xhat = (xi - mc) / sc;
                sum_g += gi;
                sum_gx += gi * xhat;
            }
            d_mu_s[j] += sum_g;
            d_sigma_s[j] += sum_gx;
            // normalisation backward with upstream scaled by sigma_s
            let scale = ss.sigma[j] / sc;
            let (mean_g, mean_gx) = (sum_g / n, sum_gx / n);
            for ((d, &xi), &gi) in d_c[k * hw..(k + 1) * hw].iter_mut().zip(x).zip(g) {
                let xhat = (xi - mc) / sc;
                *d = scale * (gi - mean_g - xhat * mean_gx);
            }
        }
    }
    let d_s = channel_stats_backward(f_s, &ss, &d_mu_s, &d_sigma_s)?;
    Ok((Tensor::from_parts(f_c.shape().to_vec(), d_c), d_s))
}

/// `(1 - alpha) * f_c + alpha * f_cs`. The endpoints are returned exactly.
pub fn interpolate_features(f_c: &Tensor, f_cs: &Tensor, alpha: f32) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    f_c.expect_same_shape(f_cs, "interpolate_features")?;
    if alpha == 0.0 {
        return Ok(f_c.clone());
    }
    if alpha == 1.0 {
        return Ok(f_cs.clone());
    }
    f_c.zip_map(f_cs, |c, s| (1.0 - alpha) * c + alpha * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(values: &[f32]) -> Tensor {
        let side = (values.len() as f64).sqrt() as usize;
        Tensor::new(vec![1, 1, side, side], values.to_vec()).unwrap()
    }

    #[test]
    fn constant_channel_stats() {
        let s = channel_stats(&plane(&[3.0; 4]), 1e-5).unwrap();
        assert_eq!(s.mu, vec![3.0]);
        assert!((s.sigma[0] - 1e-5f32.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn small_channel_stats() {
        let s = channel_stats(&plane(&[1.0, 2.0, 3.0, 4.0]), 1e-5).unwrap();
        assert_eq!(s.mu, vec![2.5]);
        assert!((s.sigma[0] - (1.25f32 + 1e-5).sqrt()).abs() < 1e-7);
        assert!((s.sigma[0] - 1.1180).abs() < 1e-4);
    }

    #[test]
    fn stats_ignore_spatial_order() {
        let a = channel_stats(&plane(&[1.0, 7.0, -2.0, 4.0]), 1e-5).unwrap();
        let b = channel_stats(&plane(&[4.0, -2.0, 1.0, 7.0]), 1e-5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adain_scalar_example() {
        // style statistics mu = 1, sigma = 1 exactly (eps = 0 on the style side
        // is emulated by picking values whose sqrt(var + eps) is 1)
        let eps = 1e-5f32;
        let d = (1.0f32 - eps).sqrt();
        let style = plane(&[1.0 - d, 1.0 + d, 1.0 - d, 1.0 + d]);
        let st = channel_stats(&style, eps).unwrap();
        assert!((st.mu[0] - 1.0).abs() < 1e-7 && (st.sigma[0] - 1.0).abs() < 1e-6);
        let out = adain(&plane(&[1.0, 2.0, 3.0, 4.0]), &style, eps).unwrap();
        let want = [-0.342, 0.553, 1.447, 2.342];
        for (o, w) in out.data().iter().zip(want) {
            assert!((o - w).abs() < 1e-3, "{o} vs {w}");
        }
    }

    #[test]
    fn constant_content_maps_to_style_mean() {
        let style = plane(&[0.0, 2.0, 4.0, 6.0]);
        let out = adain(&plane(&[5.0; 4]), &style, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn self_style_is_identity() {
        let f = Tensor::from_fn(&[2, 3, 4, 4], |i| ((i * 37) % 11) as f32 * 0.3 - 1.0);
        let out = adain(&f, &f, 1e-5).unwrap();
        assert!(out.max_abs_diff(&f).unwrap() <= 1e-5);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let a = Tensor::zeros(&[1, 2, 2, 2]);
        let b = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(adain(&a, &b, 1e-5).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let a = Tensor::from_fn(&[1, 1, 2, 2], |i| i as f32);
        let b = Tensor::from_fn(&[1, 1, 2, 2], |i| 10.0 - i as f32);
        assert_eq!(interpolate_features(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_features(&a, &b, 1.0).unwrap(), b);
        let mid = interpolate_features(&a, &b, 0.5).unwrap();
        assert!(mid.data().iter().all(|&v| (v - 5.0).abs() < 1e-6));
        assert!(interpolate_features(&a, &b, 1.5).is_err());
        assert!(interpolate_features(&a, &b, -0.1).is_err());
    }
}
