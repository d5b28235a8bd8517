//! SGD with momentum and L2 weight decay, and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
        }
    }
}

/// Optimizer state: one velocity buffer per parameter tensor.
///
/// Update rule, per parameter:
/// `v <- momentum * v + (g + weight_decay * w)`, then `w <- w - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(shape_err(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(shape_err(format!(
                    "parameter {:?}, gradient {:?}, velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        let SgdConfig {
            learning_rate: lr,
            momentum: m,
            weight_decay: wd,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = m * *vi + (gi + wd * *w);
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(shape_err(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(shape_err(format!(
                    "parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::full(&[1], v)
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut p = vec![Tensor::from_fn(&[3], |i| i as f32)];
        let before = p.clone();
        opt.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn no_momentum_is_plain_descent() {
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
        });
        let mut p = vec![scalar(2.0)];
        opt.step(&mut p, &[scalar(1.0)]).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
    }

    #[test]
    fn two_step_hand_iteration() {
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut p = vec![scalar(1.0)];
        opt.step(&mut p, &[scalar(1.0)]).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        opt.step(&mut p, &[scalar(1.0)]).unwrap();
        assert!((p[0].data()[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut opt = Sgd::new(SgdConfig::default());
        let mut p = vec![scalar(1.0)];
        assert!(opt.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        });
        let mut p = vec![Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()];
        opt.step(&mut p, &[Tensor::new(vec![2], vec![3.0, -0.2]).unwrap()]).unwrap();
        // bias correction makes the first update lr * sign(g)
        assert!((p[0].data()[0] - 0.99).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        });
        let mut p = vec![scalar(3.0)];
        for _ in 0..500 {
            let g = scalar(2.0 * (p[0].data()[0] - 1.0));
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0].data()[0] - 1.0).abs() < 1e-2);
    }
}
