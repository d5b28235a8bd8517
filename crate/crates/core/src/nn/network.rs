use std::ops::Range;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::layer::LayerSpec;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

/// A sequential network with optional tap points.
///
/// A tap point is a layer index whose output is exposed by [`Network::forward`]
/// and may receive an extra upstream gradient in [`Network::backward_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<Tensor>,
    param_ranges: Vec<Range<usize>>,
    taps: Vec<usize>,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Tensor,
    /// Activations at each tap point, in tap order.
    pub taps: Vec<Tensor>,
    /// Input of every layer, kept only when requested.
    cache: Option<Vec<Tensor>>,
}

impl Forward {
    pub fn retained(&self) -> bool {
        self.cache.is_some()
    }
}

/// Upstream gradients fed into a backward pass.
#[derive(Debug, Default, Clone, Copy)]
pub struct Upstream<'a> {
    pub output: Option<&'a Tensor>,
    /// One entry per tap point; `None` means no gradient arrives there.
    pub taps: &'a [Option<&'a Tensor>],
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// One gradient per parameter tensor (empty when not requested).
    pub params: Vec<Tensor>,
    pub input: Option<Tensor>,
}

impl Network {
    /// Builds a network with freshly initialised parameters.
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        taps: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let params = layers.iter().flat_map(|l| l.init_params(rng)).collect();
        Self::from_parts(input_shape, layers, taps, params)
    }

    /// Assembles a network from existing parameters, validating every shape.
    pub fn from_parts(
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        taps: Vec<usize>,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(shape_err(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        let mut param_ranges = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            current = layer
                .output_shape(&current)
                .map_err(|e| shape_err(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(current.clone());
            let expected = layer.param_shapes();
            for (j, shape) in expected.iter().enumerate() {
                match params.get(offset + j) {
                    Some(p) if p.shape() == shape.as_slice() => {}
                    Some(p) => {
                        return Err(shape_err(format!(
                            "layer {i} parameter {j}: expected {shape:?}, got {:?}",
                            p.shape()
                        )))
                    }
                    None => return Err(shape_err(format!("layer {i} is missing parameters"))),
                }
            }
            param_ranges.push(offset..offset + expected.len());
            offset += expected.len();
        }
        if offset != params.len() {
            return Err(shape_err(format!(
                "{} parameter tensors supplied, layers need {offset}",
                params.len()
            )));
        }
        let mut sorted = taps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != taps || taps.iter().any(|&t| t >= layers.len()) {
            return Err(invalid(format!(
                "tap points must be strictly increasing layer indices, got {taps:?}"
            )));
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            param_ranges,
            taps,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Per-sample output shape of layer `i`.
    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over every parameter buffer, hex encoded.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.ndim() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(shape_err(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Runs the network on a batch. With `retain`, layer inputs are kept so
    /// that [`Network::backward`] can be called on the result.
    pub fn forward(&self, input: &Tensor, retain: bool) -> Result<Forward> {
        self.check_input(input)?;
        let mut cache = retain.then(|| Vec::with_capacity(self.layers.len()));
        let mut taps = Vec::with_capacity(self.taps.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&self.params[self.param_ranges[i].clone()], &x)?;
            if !y.all_finite() {
                return Err(Error::NonFinite(format!("forward, layer {i} ({})", layer.kind())));
            }
            if self.taps.contains(&i) {
                taps.push(y.clone());
            }
            if let Some(c) = cache.as_mut() {
                c.push(x);
            }
            x = y;
        }
        Ok(Forward {
            output: x,
            taps,
            cache,
        })
    }

    /// Forward pass that returns only the output.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, false)?.output)
    }

    /// Parameter and input gradients for an upstream gradient on the output.
    pub fn backward(&self, fwd: &Forward, upstream: &Tensor) -> Result<Gradients> {
        self.backward_with(
            fwd,
            Upstream {
                output: Some(upstream),
                taps: &[],
            },
            true,
            true,
        )
    }

    /// General reverse pass: gradients may enter at the output and at any
    /// tap point. Parameter and input gradients are computed only on request.
    pub fn backward_with(
        &self,
        fwd: &Forward,
        upstream: Upstream<'_>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Gradients> {
        let cache = fwd.cache.as_ref().ok_or(Error::NoForwardCache)?;
        if cache.len() != self.layers.len() {
            return Err(shape_err(
                "forward pass was produced by a different network".to_string(),
            ));
        }
        if !upstream.taps.is_empty() && upstream.taps.len() != self.taps.len() {
            return Err(shape_err(format!(
                "{} tap gradients for {} tap points",
                upstream.taps.len(),
                self.taps.len()
            )));
        }
        let mut grad = match upstream.output {
            Some(g) => {
                g.expect_same_shape(&fwd.output, "backward upstream")?;
                g.clone()
            }
            None => Tensor::zeros(fwd.output.shape()),
        };

        let mut param_grads: Vec<Option<Vec<Tensor>>> = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            if let Some(t) = self.taps.iter().position(|&tp| tp == i) {
                if let Some(Some(tg)) = upstream.taps.get(t) {
                    grad.add_scaled(1.0, tg)?;
                }
            }
            let layer = &self.layers[i];
            let needs_input = i > 0 || want_input;
            let (dx, pg) = layer.backward(
                &self.params[self.param_ranges[i].clone()],
                &cache[i],
                &grad,
                needs_input,
                want_params,
            )?;
            if want_params && !pg.is_empty() {
                param_grads[i] = Some(pg);
            }
            match dx {
                Some(dx) => grad = dx,
                None => break,
            }
        }

        let params: Vec<Tensor> = param_grads.into_iter().flatten().flatten().collect();
        for (j, g) in params.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("backward, parameter {j}")));
            }
        }
        let input = if want_input {
            grad.ensure_finite("backward, input gradient")?;
            Some(grad)
        } else {
            None
        };
        Ok(Gradients { params, input })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::layer::PadMode;

    fn small_net(rng: &mut ChaCha8Rng) -> Network {
        Network::new(
            &[2, 4, 4],
            vec![
                LayerSpec::conv3x3(2, 3, PadMode::Zero),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::linear(12, 2),
            ],
            vec![1],
            rng,
        )
        .unwrap()
    }

    #[test]
    fn identity_conv_passes_input_through() {
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let net = Network::from_parts(
            &[3, 5, 5],
            vec![LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 3,
                kernel: 1,
                stride: 1,
                padding: 0,
                pad_mode: PadMode::Zero,
            }],
            vec![],
            vec![w, Tensor::zeros(&[3])],
        )
        .unwrap();
        let x = Tensor::from_fn(&[2, 3, 5, 5], |i| (i as f32 * 0.37).sin());
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn backward_requires_retained_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = small_net(&mut rng);
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f32 * 0.1);
        let fwd = net.forward(&x, false).unwrap();
        let up = Tensor::zeros(fwd.output.shape());
        assert!(matches!(net.backward(&fwd, &up), Err(Error::NoForwardCache)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = small_net(&mut rng);
        let x = Tensor::from_fn(&[2, 2, 4, 4], |i| (i as f32).cos());
        let fwd = net.forward(&x, true).unwrap();
        let g = net.backward(&fwd, &Tensor::zeros(fwd.output.shape())).unwrap();
        assert_eq!(g.params.len(), net.params().len());
        for (p, gp) in net.params().iter().zip(&g.params) {
            assert_eq!(p.shape(), gp.shape());
            assert!(gp.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_sum_loss_gradient_is_input() {
        // y = Wx (zero bias), L = sum(y) => dL/dW[o][i] = x[i]
        let net = Network::from_parts(
            &[3],
            vec![LayerSpec::linear(3, 2)],
            vec![],
            vec![
                Tensor::from_fn(&[2, 3], |i| i as f32 - 2.0),
                Tensor::zeros(&[2]),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.5, 2.0]).unwrap();
        let fwd = net.forward(&x, true).unwrap();
        let g = net.backward(&fwd, &Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(g.params[0].data(), &[0.5, -1.5, 2.0, 0.5, -1.5, 2.0]);
        assert_eq!(g.params[1].data(), &[1.0, 1.0]);
    }

    #[test]
    fn forward_leaves_params_untouched_and_returns_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = small_net(&mut rng);
        let before = net.param_hash();
        let x = Tensor::from_fn(&[3, 2, 4, 4], |i| (i as f32 * 0.1).sin());
        let fwd = net.forward(&x, true).unwrap();
        assert_eq!(fwd.taps.len(), 1);
        assert_eq!(fwd.taps[0].shape(), &[3, 3, 4, 4]);
        assert_eq!(fwd.output.shape(), &[3, 2]);
        assert_eq!(before, net.param_hash());
    }

    #[test]
    fn rejects_wrong_input_and_bad_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = small_net(&mut rng);
        assert!(net.forward(&Tensor::zeros(&[1, 3, 4, 4]), false).is_err());
        let layers = net.layers().to_vec();
        assert!(Network::new(&[2, 4, 4], layers.clone(), vec![2, 1], &mut rng).is_err());
        assert!(Network::new(&[2, 4, 4], layers, vec![9], &mut rng).is_err());
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = small_net(&mut rng);
        let mut x = Tensor::zeros(&[1, 2, 4, 4]);
        x.data_mut()[0] = f32::INFINITY;
        assert!(matches!(net.forward(&x, false), Err(Error::NonFinite(_))));
    }
}
