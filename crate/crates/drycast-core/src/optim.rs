//! Adam optimizer with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Optimizer state over a fixed list of parameter tensors. Moment buffers
/// are zero-initialized and the step counter starts at 0.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. `grads[i]` must match `params[i]` in shape.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Invalid {
                what: alloc::format!(
                    "adam: {} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.cfg.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.cfg.beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.cfg.lr * mhat / (fmath::sqrt(vhat) + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(params: &mut [Tensor]) -> Vec<&mut Tensor> {
        params.iter_mut().collect()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = [Tensor::from_slice(&[1.0, -2.0, 3.0])];
        let grads = [Tensor::zeros(&[3])];
        let mut adam = Adam::new(AdamConfig::default(), &[&params[0]]);
        adam.step(&mut refs(&mut params), &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // At t = 1 the bias corrections cancel the gradient scale, so every
        // coordinate moves by lr (up to ε), opposite the gradient sign.
        for &gval in &[0.5, -1.0, 20.0] {
            let mut params = [Tensor::from_slice(&[0.0, 0.0])];
            let grads = [Tensor::from_slice(&[gval, gval])];
            let cfg = AdamConfig::with_lr(0.003);
            let mut adam = Adam::new(cfg, &[&params[0]]);
            adam.step(&mut refs(&mut params), &grads).unwrap();
            for &p in params[0].data() {
                assert!((p.abs() - 0.003).abs() <= 1e-9, "step {p} for grad {gval}");
                assert_eq!(p > 0.0, gval < 0.0);
            }
        }
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // Hand-rolled scalar Adam, lr 0.1, gradients 1 then -1.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut theta = 0.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, g) in [(1, 1.0_f64), (2, -1.0)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            theta -= lr * mhat / (vhat.sqrt() + eps);
        }

        let mut params = [Tensor::from_slice(&[0.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &[&params[0]]);
        adam.step(&mut refs(&mut params), &[Tensor::from_slice(&[1.0])]).unwrap();
        adam.step(&mut refs(&mut params), &[Tensor::from_slice(&[-1.0])]).unwrap();
        assert!(
            (params[0].data()[0] - theta).abs() <= 1e-12,
            "{} vs {}",
            params[0].data()[0],
            theta
        );
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = [Tensor::zeros(&[3])];
        let grads = [Tensor::zeros(&[4])];
        let mut adam = Adam::new(AdamConfig::default(), &[&params[0]]);
        assert!(adam.step(&mut refs(&mut params), &grads).is_err());
    }
}
