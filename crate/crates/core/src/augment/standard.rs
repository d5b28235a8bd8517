//! Random crop after zero padding, and horizontal flip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropFlip {
    /// Zero padding added on every side before cropping back to size.
    pub pad: usize,
    pub flip: bool,
}

impl Default for CropFlip {
    fn default() -> Self {
        Self { pad: 4, flip: true }
    }
}

/// Mirrors every `[H, W]` plane of `x` left to right.
pub fn horizontal_flip(x: &Tensor) -> Result<Tensor> {
    let w = *x.shape().last().expect("tensors have at least one dim");
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Applies an independent random crop and flip to every image of a
/// `[B, C, H, W]` batch.
pub fn random_crop_flip<R: Rng + ?Sized>(images: &Tensor, cfg: CropFlip, rng: &mut R) -> Result<Tensor> {
    let (b, c, h, w) = images.dims4()?;
    let pad = cfg.pad;
    let mut out = Tensor::zeros(images.shape());
    for i in 0..b {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = cfg.flip && rng.random::<bool>();
        let src = images.item(i);
        let dst = out.item_mut(i);
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xo = if flip { w - 1 - x } else { x };
                    let sx = xo as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_twice_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f32);
        assert_eq!(horizontal_flip(&horizontal_flip(&x).unwrap()).unwrap(), x);
        let f = horizontal_flip(&x).unwrap();
        assert_eq!(&f.data()[..5], &[4.0, 3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_pad_no_flip_is_identity() {
        let x = Tensor::from_fn(&[3, 3, 6, 6], |i| i as f32 * 0.01);
        let cfg = CropFlip { pad: 0, flip: false };
        let y = random_crop_flip(&x, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn crop_is_a_shift_of_the_input() {
        let x = Tensor::from_fn(&[1, 1, 8, 8], |i| 1.0 + i as f32);
        let cfg = CropFlip { pad: 2, flip: false };
        let y = random_crop_flip(&x, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        // every non-padded output value is an input value with a fixed offset
        let offsets: std::collections::HashSet<i64> = y
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| v as i64 - 1 - i as i64)
            .collect();
        assert_eq!(offsets.len(), 1);
    }
}
