//! Rotation-recognition multi-task learning and pixel/feature mixup.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::nn::{cross_entropy, LossGrad};
use crate::tensor::Tensor;

/// Default weight of the rotation loss.
pub const DEFAULT_ETA: f32 = 0.5;
/// Default Beta parameter for mixup.
pub const DEFAULT_GAMMA: f32 = 0.4;

/// Rotates every `[H, W]` plane of a `[C, H, W]` or `[B, C, H, W]` tensor
/// counter-clockwise by `90 * k` degrees.
pub fn rotate90(image: &Tensor, k: usize) -> Result<Tensor> {
    if k > 3 {
        return Err(invalid(format!("rotation index must be in 0..=3, got {k}")));
    }
    let nd = image.ndim();
    if nd < 2 {
        return Err(shape_err("rotate90 needs spatial dims"));
    }
    let (h, w) = (image.shape()[nd - 2], image.shape()[nd - 1]);
    if h != w {
        return Err(shape_err(format!("rotate90 needs square images, got {h}x{w}")));
    }
    if k == 0 {
        return Ok(image.clone());
    }
    let n = h;
    let mut out = Tensor::zeros(image.shape());
    for (src, dst) in image.data().chunks_exact(n * n).zip(out.data_mut().chunks_exact_mut(n * n)) {
        for i in 0..n {
            for j in 0..n {
                let (si, sj) = match k {
                    1 => (j, n - 1 - i),
                    2 => (n - 1 - i, n - 1 - j),
                    _ => (n - 1 - j, i),
                };
                dst[i * n + j] = src[si * n + sj];
            }
        }
    }
    Ok(out)
}

/// An image with the index of the rotation applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSample {
    pub image: Tensor,
    /// 0, 1, 2, 3 for 0, 90, 180, 270 degrees.
    pub rotation_label: usize,
}

/// Rotates each image of a `[B, C, H, W]` batch by its own uniformly drawn
/// multiple of 90 degrees; returns the rotated batch and the labels.
pub fn rotation_batch<R: Rng + ?Sized>(images: &Tensor, rng: &mut R) -> Result<(Tensor, Vec<usize>)> {
    let (b, _, _, _) = images.dims4()?;
    let mut out = images.clone();
    let mut labels = Vec::with_capacity(b);
    for i in 0..b {
        let k = rng.random_range(0..4);
        labels.push(k);
        if k != 0 {
            let r = rotate90(&images.item_tensor(i), k)?;
            out.item_mut(i).copy_from_slice(r.data());
        }
    }
    Ok((out, labels))
}

pub fn multitask_loss(cls_loss: f32, rot_loss: f32, eta: f32) -> f32 {
    cls_loss + eta * rot_loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixupLevel {
    Pixel,
    Feature,
}

/// One mixing of sample `index_i` with `index_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupPair {
    pub lambda_mix: f32,
    pub index_i: usize,
    pub index_j: usize,
    pub level: MixupLevel,
}

/// Draws from `Beta(gamma, gamma)`; `gamma = 0` disables mixing and returns
/// exactly 1 without touching `rng`.
pub fn sample_mixup_lambda<R: Rng + ?Sized>(gamma: f32, rng: &mut R) -> Result<f32> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be a non-negative number, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(gamma, gamma).map_err(|e| invalid(format!("Beta({gamma}, {gamma}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Pairs sample `i` with sample `perm[i]` of a random permutation.
pub fn mixup_pairs<R: Rng + ?Sized>(batch_size: usize, lambda_mix: f32, level: MixupLevel, rng: &mut R) -> Vec<MixupPair> {
    let mut perm: Vec<usize> = (0..batch_size).collect();
    perm.shuffle(rng);
    perm.into_iter()
        .enumerate()
        .map(|(i, j)| MixupPair {
            lambda_mix,
            index_i: i,
            index_j: j,
            level,
        })
        .collect()
}

fn check_lambda(lambda_mix: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda_mix) {
        return Err(invalid(format!("mixing weight must lie in [0, 1], got {lambda_mix}")));
    }
    Ok(())
}

fn convex(a: &Tensor, b: &Tensor, lambda_mix: f32) -> Result<Tensor> {
    check_lambda(lambda_mix)?;
    a.expect_same_shape(b, "mixup")?;
    if lambda_mix == 1.0 {
        return Ok(a.clone());
    }
    if lambda_mix == 0.0 {
        return Ok(b.clone());
    }
    a.zip_map(b, |x, y| lambda_mix * x + (1.0 - lambda_mix) * y)
}

/// `lambda * x_i + (1 - lambda) * x_j`; the endpoints return an input exactly.
pub fn mixup_pixel(x_i: &Tensor, x_j: &Tensor, lambda_mix: f32) -> Result<Tensor> {
    convex(x_i, x_j, lambda_mix)
}

/// Same convex combination applied to intermediate features.
pub fn mixup_feature(f_i: &Tensor, f_j: &Tensor, lambda_mix: f32) -> Result<Tensor> {
    convex(f_i, f_j, lambda_mix)
}

/// `lambda * CE(logits, y_i) + (1 - lambda) * CE(logits, y_j)` with its
/// gradient w.r.t. the logits.
pub fn mixed_loss(logits: &Tensor, y_i: &[usize], y_j: &[usize], lambda_mix: f32) -> Result<LossGrad> {
    check_lambda(lambda_mix)?;
    if lambda_mix == 1.0 {
        return cross_entropy(logits, y_i);
    }
    if lambda_mix == 0.0 {
        return cross_entropy(logits, y_j);
    }
    let a = cross_entropy(logits, y_i)?;
    let b = cross_entropy(logits, y_j)?;
    Ok(LossGrad {
        loss: lambda_mix * a.loss + (1.0 - lambda_mix) * b.loss,
        grad: a.grad.zip_map(&b.grad, |ga, gb| lambda_mix * ga + (1.0 - lambda_mix) * gb)?,
    })
}
