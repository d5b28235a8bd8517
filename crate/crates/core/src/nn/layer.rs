//! Layer kinds, their shape algebra, and forward/backward kernels.
//!
//! Shapes handled here are per-sample (`[C, H, W]` or `[F]`); the batch axis
//! is prepended at run time.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::gemm::{gemm, MatRef};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// How a convolution reads outside the image border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

impl PadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PadMode::Zero => "zero",
            PadMode::Reflect => "reflect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(PadMode::Zero),
            "reflect" => Some(PadMode::Reflect),
            _ => None,
        }
    }

    /// Maps a padded coordinate onto the source axis of length `len`.
    #[inline]
    fn source_index(self, i: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PadMode::Zero => None,
            PadMode::Reflect => {
                let r = if i < 0 { -i } else { 2 * n - 2 - i };
                Some(r as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    /// Logistic function `1 / (1 + exp(-x))`.
    Sigmoid,
    /// Non-overlapping max pooling with window and stride `size`.
    MaxPool2d {
        size: usize,
    },
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample {
        scale: usize,
    },
    Flatten,
}

impl LayerSpec {
    /// 3×3, stride 1, "same" padding convolution.
    pub fn conv3x3(in_channels: usize, out_channels: usize, pad_mode: PadMode) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            pad_mode,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::MaxPool2d { .. } => "maxpool",
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                pad_mode,
            } => {
                let [c, h, w] = chw(input, "conv")?;
                if c != in_channels {
                    return Err(shape_err(format!(
                        "conv expects {in_channels} channels, got {c}"
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(invalid("conv kernel, stride and channels must be positive"));
                }
                if pad_mode == PadMode::Reflect && (padding >= h || padding >= w) {
                    return Err(shape_err(format!(
                        "reflect padding {padding} needs spatial dims > padding, got {h}x{w}"
                    )));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(shape_err(format!(
                        "conv kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                let ho = (h + 2 * padding - kernel) / stride + 1;
                let wo = (w + 2 * padding - kernel) / stride + 1;
                Ok(vec![out_channels, ho, wo])
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(shape_err(format!(
                        "linear expects [{in_features}], got {input:?}"
                    )));
                }
                if out_features == 0 {
                    return Err(invalid("linear needs positive out_features"));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { size } => {
                let [c, h, w] = chw(input, "maxpool")?;
                if size == 0 || h < size || w < size {
                    return Err(shape_err(format!("maxpool {size} on {h}x{w}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Upsample { scale } => {
                let [c, h, w] = chw(input, "upsample")?;
                if scale == 0 {
                    return Err(invalid("upsample scale must be positive"));
                }
                Ok(vec![c, h * scale, w * scale])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Parameter tensor shapes (weight, then bias) in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            _ => Vec::new(),
        }
    }

    /// Kaiming-uniform (fan-in) weights, zero bias.
    pub(crate) fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let shapes = self.param_shapes();
        if shapes.is_empty() {
            return Vec::new();
        }
        let fan_in: usize = shapes[0][1..].iter().product();
        let bound = (6.0 / fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Tensor::from_fn(&shapes[0], |_| dist.sample(rng));
        let bias = Tensor::zeros(&shapes[1]);
        vec![weight, bias]
    }

    pub(crate) fn forward(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                pad_mode,
                ..
            } => {
                let geom = ConvGeom::new(x, &params[0], kernel, stride, padding, pad_mode)?;
                Ok(geom.forward(x, &params[0], &params[1]))
            }
            LayerSpec::Linear { .. } => linear_forward(x, &params[0], &params[1]),
            LayerSpec::Relu => Ok(x.map(|v| v.max(0.0))),
            LayerSpec::Sigmoid => Ok(x.map(sigmoid)),
            LayerSpec::MaxPool2d { size } => maxpool_forward(x, size),
            LayerSpec::Upsample { scale } => upsample_forward(x, scale),
            LayerSpec::Flatten => {
                let b = x.batch();
                x.clone().reshape(&[b, x.item_len()])
            }
        }
    }

    /// Returns (input gradient if requested, parameter gradients if requested).
    pub(crate) fn backward(
        &self,
        params: &[Tensor],
        x: &Tensor,
        dy: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                pad_mode,
                ..
            } => {
                let geom = ConvGeom::new(x, &params[0], kernel, stride, padding, pad_mode)?;
                Ok(geom.backward(x, &params[0], dy, want_input, want_params))
            }
            LayerSpec::Linear { .. } => Ok(linear_backward(x, &params[0], dy, want_input, want_params)),
            LayerSpec::Relu => {
                let dx = want_input.then(|| {
                    let data = x
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    Tensor::from_parts(x.shape().to_vec(), data)
                });
                Ok((dx, Vec::new()))
            }
            LayerSpec::Sigmoid => {
                let dx = want_input.then(|| {
                    let data = x
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &g)| {
                            let y = sigmoid(v);
                            g * y * (1.0 - y)
                        })
                        .collect();
                    Tensor::from_parts(x.shape().to_vec(), data)
                });
                Ok((dx, Vec::new()))
            }
            LayerSpec::MaxPool2d { size } => Ok((
                want_input.then(|| maxpool_backward(x, dy, size)),
                Vec::new(),
            )),
            LayerSpec::Upsample { scale } => Ok((
                want_input.then(|| upsample_backward(x, dy, scale)),
                Vec::new(),
            )),
            LayerSpec::Flatten => Ok((
                want_input.then(|| Tensor::from_parts(x.shape().to_vec(), dy.data().to_vec())),
                Vec::new(),
            )),
        }
    }
}

fn chw(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(shape_err(format!("{what} expects a [C, H, W] input, got {shape:?}"))),
    }
}

struct ConvGeom {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pad_mode: PadMode,
}

impl ConvGeom {
    fn new(
        x: &Tensor,
        weight: &Tensor,
        kernel: usize,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    ) -> Result<Self> {
        let (batch, in_ch, h, w) = x.dims4()?;
        let out_ch = weight.shape()[0];
        if weight.shape()[1] != in_ch {
            return Err(shape_err(format!(
                "conv weight {:?} vs input channels {in_ch}",
                weight.shape()
            )));
        }
        let ho = (h + 2 * padding - kernel) / stride + 1;
        let wo = (w + 2 * padding - kernel) / stride + 1;
        Ok(Self {
            batch,
            in_ch,
            out_ch,
            h,
            w,
            ho,
            wo,
            kernel,
            stride,
            padding,
            pad_mode,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn columns(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Visits the im2col matrix as runs `(column offset, source offset, len)`
    /// that are contiguous on both sides. Within an output row, runs come in
    /// increasing column order, so accumulating through them adds in the same
    /// order as an element-by-element walk.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.columns();
        let hw = self.h * self.w;
        let ohw = self.ho * self.wo;
        let pad = self.padding as isize;
        for ci in 0..self.in_ch {
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let row = (ci * self.kernel + ki) * self.kernel + kj;
                    let row_base = row * n;
                    // output columns whose source lies inside the row, for stride 1
                    let (lo, hi) = if self.stride == 1 {
                        let lo = (pad - kj as isize).clamp(0, self.wo as isize) as usize;
                        let hi = (self.w as isize + pad - kj as isize).clamp(lo as isize, self.wo as isize) as usize;
                        (lo, hi)
                    } else {
                        (0, 0)
                    };
                    let one = |ow: usize| {
                        let iw = (ow * self.stride + kj) as isize - pad;
                        self.pad_mode.source_index(iw, self.w)
                    };
                    for b in 0..self.batch {
                        let src_base = (b * self.in_ch + ci) * hw;
                        let col_base = row_base + b * ohw;
                        for oh in 0..self.ho {
                            let ih = (oh * self.stride + ki) as isize - pad;
                            let Some(sh) = self.pad_mode.source_index(ih, self.h) else {
                                continue;
                            };
                            let dst = col_base + oh * self.wo;
                            let src = src_base + sh * self.w;
                            if hi > lo {
                                for ow in 0..lo {
                                    if let Some(sw) = one(ow) {
                                        f(dst + ow, src + sw, 1);
                                    }
                                }
                                f(dst + lo, src + (lo + kj) - self.padding, hi - lo);
                                for ow in hi..self.wo {
                                    if let Some(sw) = one(ow) {
                                        f(dst + ow, src + sw, 1);
                                    }
                                }
                            } else {
                                for ow in 0..self.wo {
                                    if let Some(sw) = one(ow) {
                                        f(dst + ow, src + sw, 1);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &Tensor) -> Vec<f32> {
        let mut cols = vec![0.0; self.patch_len() * self.columns()];
        let src = x.data();
        self.for_each_run(|d, s, len| cols[d..d + len].copy_from_slice(&src[s..s + len]));
        cols
    }

    fn forward(&self, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
        let k = self.patch_len();
        let n = self.columns();
        let cols = self.im2col(x);
        let mut out_mat = vec![0.0; self.out_ch * n];
        gemm(
            MatRef::row_major(weight.data(), self.out_ch, k),
            MatRef::row_major(&cols, k, n),
            0.0,
            &mut out_mat,
        );
        let ohw = self.ho * self.wo;
        let mut out = vec![0.0; self.batch * self.out_ch * ohw];
        for co in 0..self.out_ch {
            let bias = bias.data()[co];
            let row = &out_mat[co * n..(co + 1) * n];
            for b in 0..self.batch {
                let dst = &mut out[(b * self.out_ch + co) * ohw..][..ohw];
                for (d, &v) in dst.iter_mut().zip(&row[b * ohw..(b + 1) * ohw]) {
                    *d = v + bias;
                }
            }
        }
        Tensor::from_parts(vec![self.batch, self.out_ch, self.ho, self.wo], out)
    }

    fn backward(
        &self,
        x: &Tensor,
        weight: &Tensor,
        dy: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> (Option<Tensor>, Vec<Tensor>) {
        let k = self.patch_len();
        let n = self.columns();
        let ohw = self.ho * self.wo;
        let mut dmat = vec![0.0; self.out_ch * n];
        for co in 0..self.out_ch {
            for b in 0..self.batch {
                dmat[co * n + b * ohw..][..ohw]
                    .copy_from_slice(&dy.data()[(b * self.out_ch + co) * ohw..][..ohw]);
            }
        }
        let dmat_ref = MatRef::row_major(&dmat, self.out_ch, n);

        let mut grads = Vec::new();
        if want_params {
            let cols = self.im2col(x);
            let mut dw = vec![0.0; self.out_ch * k];
            gemm(dmat_ref, MatRef::row_major(&cols, k, n).t(), 0.0, &mut dw);
            let db: Vec<f32> = (0..self.out_ch)
                .map(|co| dmat[co * n..(co + 1) * n].iter().sum())
                .collect();
            grads.push(Tensor::from_parts(weight.shape().to_vec(), dw));
            grads.push(Tensor::from_parts(vec![self.out_ch], db));
        }

        let dx = want_input.then(|| {
            let mut dcols = vec![0.0; k * n];
            gemm(
                MatRef::row_major(weight.data(), self.out_ch, k).t(),
                dmat_ref,
                0.0,
                &mut dcols,
            );
            let mut dx = vec![0.0; x.len()];
            self.for_each_run(|c, s, len| {
                for (d, &g) in dx[s..s + len].iter_mut().zip(&dcols[c..c + len]) {
                    *d += g;
                }
            });
            Tensor::from_parts(x.shape().to_vec(), dx)
        });
        (dx, grads)
    }
}

fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    if x.ndim() != 2 || x.shape()[1] != in_f {
        return Err(shape_err(format!(
            "linear [{out_f}x{in_f}] applied to {:?}",
            x.shape()
        )));
    }
    let b = x.batch();
    let mut out = vec![0.0; b * out_f];
    for row in out.chunks_mut(out_f) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        MatRef::row_major(x.data(), b, in_f),
        MatRef::row_major(weight.data(), out_f, in_f).t(),
        1.0,
        &mut out,
    );
    Ok(Tensor::from_parts(vec![b, out_f], out))
}

fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    want_input: bool,
    want_params: bool,
) -> (Option<Tensor>, Vec<Tensor>) {
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let b = x.batch();
    let dy_ref = MatRef::row_major(dy.data(), b, out_f);
    let mut grads = Vec::new();
    if want_params {
        let mut dw = vec![0.0; out_f * in_f];
        gemm(dy_ref.t(), MatRef::row_major(x.data(), b, in_f), 0.0, &mut dw);
        let mut db = vec![0.0; out_f];
        for row in dy.data().chunks(out_f) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        grads.push(Tensor::from_parts(vec![out_f, in_f], dw));
        grads.push(Tensor::from_parts(vec![out_f], db));
    }
    let dx = want_input.then(|| {
        let mut dx = vec![0.0; b * in_f];
        gemm(dy_ref, MatRef::row_major(weight.data(), out_f, in_f), 0.0, &mut dx);
        Tensor::from_parts(vec![b, in_f], dx)
    });
    (dx, grads)
}

/// Index of the maximum in each pooling window; first maximum wins ties.
fn maxpool_argmax(x: &Tensor, size: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / size, w / size);
    let src = x.data();
    let mut idx = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * size * w + ow * size;
                for i in 0..size {
                    for j in 0..size {
                        let p = base + (oh * size + i) * w + ow * size + j;
                        if src[p] > src[best] {
                            best = p;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((idx, vec![b, c, ho, wo]))
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn maxpool_forward(x: &Tensor, size: usize) -> Result<Tensor> {
    let (idx, shape) = maxpool_argmax(x, size)?;
    let src = x.data();
    Ok(Tensor::from_parts(shape, idx.iter().map(|&i| src[i]).collect()))
}

fn maxpool_backward(x: &Tensor, dy: &Tensor, size: usize) -> Tensor {
    let (idx, _) = maxpool_argmax(x, size).expect("validated in forward");
    let mut dx = vec![0.0; x.len()];
    for (&i, &g) in idx.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

fn upsample_forward(x: &Tensor, scale: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (h * scale, w * scale);
    let src = x.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oh in 0..ho {
            let row = &src[base + (oh / scale) * w..][..w];
            for ow in 0..wo {
                out.push(row[ow / scale]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, ho, wo], out))
}

fn upsample_backward(x: &Tensor, dy: &Tensor, scale: usize) -> Tensor {
    let (b, c, h, w) = x.dims4().expect("validated in forward");
    let (ho, wo) = (h * scale, w * scale);
    let g = dy.data();
    let mut dx = vec![0.0; x.len()];
    for plane in 0..b * c {
        for oh in 0..ho {
            for ow in 0..wo {
                dx[plane * h * w + (oh / scale) * w + ow / scale] += g[plane * ho * wo + oh * wo + ow];
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mapping() {
        let m = PadMode::Reflect;
        assert_eq!(m.source_index(-1, 4), Some(1));
        assert_eq!(m.source_index(-2, 4), Some(2));
        assert_eq!(m.source_index(4, 4), Some(2));
        assert_eq!(m.source_index(5, 4), Some(1));
        assert_eq!(PadMode::Zero.source_index(-1, 4), None);
        assert_eq!(PadMode::Zero.source_index(3, 4), Some(3));
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = LayerSpec::Relu.forward(&[], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_and_upsample_roundtrip_shapes() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let p = maxpool_forward(&x, 2).unwrap();
        assert_eq!(p.data(), &[5.0, 7.0, 13.0, 15.0]);
        let u = upsample_forward(&p, 2).unwrap();
        assert_eq!(u.shape(), &[1, 1, 4, 4]);
        assert_eq!(&u.data()[..4], &[5.0, 5.0, 7.0, 7.0]);
        let g = upsample_backward(&p, &Tensor::full(&[1, 1, 4, 4], 1.0), 2);
        assert_eq!(g.data(), &[4.0; 4]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let g = maxpool_backward(&x, &Tensor::full(&[1, 1, 1, 1], 3.0), 2);
        assert_eq!(g.data(), &[3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let conv = LayerSpec::conv3x3(3, 8, PadMode::Reflect);
        assert!(conv.output_shape(&[4, 8, 8]).is_err());
        assert!(conv.output_shape(&[3, 1, 1]).is_err());
        assert_eq!(conv.output_shape(&[3, 8, 8]).unwrap(), vec![8, 8, 8]);
        assert!(LayerSpec::linear(4, 2).output_shape(&[5]).is_err());
        assert!(LayerSpec::MaxPool2d { size: 2 }.output_shape(&[1, 1, 1]).is_err());
    }
}
