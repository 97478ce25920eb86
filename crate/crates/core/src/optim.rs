//! Adam with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            weight_decay: 1e-7,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Float> AdamSlot<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// Step counter shared by all parameter groups of one optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once per batch before [`Adam::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Restarts the moment estimates' bias correction.
    pub fn reset(&mut self) {
        self.step = 0;
    }

    /// `p <- p - lr * wd * p`, then the bias-corrected Adam update.
    pub fn update<T: Float>(&self, slot: &mut AdamSlot<T>, params: &mut [T], grads: &[T], lr: f64) {
        debug_assert!(self.step > 0, "begin_step not called");
        debug_assert_eq!(params.len(), grads.len());
        let c = self.config;
        let cast = |v: f64| T::from(v).expect("finite constant");
        let t = self.step.min(i32::MAX as u64) as i32;
        let b1 = cast(c.beta1);
        let b2 = cast(c.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let decay = one - cast(lr * c.weight_decay);
        let lr_t = cast(lr);
        let eps = cast(c.epsilon);
        if slot.m.len() != params.len() {
            *slot = AdamSlot::new(params.len());
        }
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut slot.m).zip(&mut slot.v) {
            *p = *p * decay;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_step_is_pure_decay() {
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 1e-9,
            ..AdamConfig::default()
        });
        adam.begin_step();
        let mut p = vec![3.0f64, -2.0];
        let mut slot = AdamSlot::new(2);
        adam.update(&mut slot, &mut p, &[0.0, 0.0], 1e-4);
        assert!((p[0] / 3.0 - (1.0 - 1e-13)).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam.begin_step();
        let mut p = vec![1.0f64];
        let mut slot = AdamSlot::new(1);
        adam.update(&mut slot, &mut p, &[5.0], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-8);
    }
}
