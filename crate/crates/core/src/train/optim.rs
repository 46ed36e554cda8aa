//! Adaptive-moment optimizer with decoupled weight decay, and the triangular
//! cyclic learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr` from the gradients stored in `params`.
    ///
    /// `p ← p·(1 − lr·λ) − lr·m̂/(√v̂ + ε)` with bias-corrected moments `m̂`, `v̂`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f32) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        let decay = 1.0 - lr * c.weight_decay;
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (values, grads) = p.value_and_grad_mut();
            if values.len() != m.len() {
                return Err(Error::Contract(format!(
                    "parameter {} changed size",
                    p.name()
                )));
            }
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] as f64 / bc1;
                let v_hat = v[i] as f64 / bc2;
                let update = (m_hat / (v_hat.sqrt() + c.eps as f64)) as f32;
                values[i] = values[i] * decay - lr * update;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CyclicSchedule {
    pub base_lr: f32,
    pub max_lr: f32,
    pub half_period_steps: u64,
}

impl CyclicSchedule {
    pub fn new(base_lr: f32, max_lr: f32, half_period_steps: u64) -> Result<Self> {
        if !(base_lr < max_lr) || base_lr < 0.0 || half_period_steps == 0 {
            return Err(Error::Config(format!(
                "cyclic schedule needs 0 ≤ base_lr < max_lr and half period ≥ 1 \
                 (got {base_lr}, {max_lr}, {half_period_steps})"
            )));
        }
        Ok(Self {
            base_lr,
            max_lr,
            half_period_steps,
        })
    }

    /// Triangular wave: base at multiples of `2·half`, max at odd multiples of `half`.
    pub fn lr_at(&self, step: u64) -> f32 {
        let h = self.half_period_steps;
        let phase = step % (2 * h);
        let dist = if phase <= h { phase } else { 2 * h - phase };
        let frac = dist as f64 / h as f64;
        (self.base_lr as f64 * (1.0 - frac) + self.max_lr as f64 * frac) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f32, g: f32) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(v)).unwrap();
        s.get_mut(id).grad_mut()[0] = g;
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0, 1.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            &s,
        );
        opt.step(&mut s, 0.1).unwrap();
        let v = s.iter().next().unwrap().value().data()[0];
        assert!((v - 0.9).abs() < 1e-6, "{v}");
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut s = scalar_store(2.0, 0.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 0.1).unwrap();
        let v = s.iter().next().unwrap().value().data()[0];
        assert_eq!(v, 2.0 * (1.0 - 0.1 * 0.01));
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = scalar_store(-0.37, 0.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            &s,
        );
        for _ in 0..5 {
            opt.step(&mut s, 0.1).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value().data()[0], -0.37);
    }

    #[test]
    fn schedule_endpoints() {
        let s = CyclicSchedule::new(1e-5, 1e-4, 10).unwrap();
        assert_eq!(s.lr_at(0), 1e-5);
        assert_eq!(s.lr_at(10), 1e-4);
        assert_eq!(s.lr_at(20), 1e-5);
        assert!((s.lr_at(5) - 5.5e-5).abs() < 1e-11);
        assert!(CyclicSchedule::new(1e-4, 1e-4, 1).is_err());
        assert!(CyclicSchedule::new(1e-5, 1e-4, 0).is_err());
    }
}
