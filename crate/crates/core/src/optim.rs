//! Adaptive moment estimation over a fixed-size parameter vector.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Step size and decay rates. Defaults: step 1e-2, decays 0.9 / 0.999,
/// epsilon 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            learning_rate: T::lit(1e-2),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

impl<T: Real> AdamConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !(self.learning_rate > T::zero() && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid("decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > T::zero() && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive and finite"));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the number of steps taken.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamState<T, const N: usize> {
    pub m: [T; N],
    pub v: [T; N],
    pub step: u64,
}

impl<T: Real, const N: usize> Default for AdamState<T, N> {
    fn default() -> Self {
        AdamState {
            m: [T::zero(); N],
            v: [T::zero(); N],
            step: 0,
        }
    }
}

impl<T: Real, const N: usize> AdamState<T, N> {
    /// Applies one bias-corrected update to `params` in place.
    pub fn update(&mut self, cfg: &AdamConfig<T>, params: &mut [T; N], grad: &[T; N]) {
        self.step += 1;
        let t = T::lit(self.step as f64);
        let one = T::one();
        let correct1 = one - cfg.beta1.powf(t);
        let correct2 = one - cfg.beta2.powf(t);
        for i in 0..N {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (one - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (one - cfg.beta2) * g * g;
            let m_hat = self.m[i] / correct1;
            let v_hat = self.v[i] / correct2;
            params[i] = params[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}
