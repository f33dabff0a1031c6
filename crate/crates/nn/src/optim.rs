use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{NnError, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Adam with decoupled weight decay. Holds per-parameter moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every unfrozen parameter in `store` using its accumulated
    /// gradient, then zeroes the gradients.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        let AdamConfig { beta1, beta2, eps, weight_decay, .. } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in store.iter_mut() {
            if p.frozen {
                p.grad.iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let n = p.grad.len();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    detail: format!("moment for `{name}` has {} entries", m.len()),
                });
            }
            let values = p.value.data_mut();
            for i in 0..n {
                let g = p.grad[i];
                values[i] -= lr * weight_decay * values[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

/// Cosine annealing with warm restarts. The first cycle lasts `t0` epochs and
/// every subsequent cycle is `t_mult` times longer than the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub t0: usize,
    pub t_mult: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64) -> Self {
        Self { base_lr, min_lr: 0.0, t0: 10, t_mult: 2 }
    }

    /// `(epochs into the current cycle, current cycle length)`.
    pub fn cycle_position(&self, epoch: usize) -> (usize, usize) {
        let t0 = self.t0.max(1);
        if self.t_mult <= 1 {
            return (epoch % t0, t0);
        }
        let mut start = 0;
        let mut len = t0;
        while epoch >= start + len {
            start += len;
            len *= self.t_mult;
        }
        (epoch - start, len)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let (cur, len) = self.cycle_position(epoch);
        let cos = (PI * cur as f64 / len as f64).cos();
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let mut store = scalar_store(1.25);
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            adam.step(&mut store, 1e-2).unwrap();
        }
        assert_eq!(store.value("x").unwrap().data()[0], 1.25);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let lr = 2e-4;
        let mut store = scalar_store(0.5);
        store.get_mut("x").unwrap().grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        adam.step(&mut store, lr).unwrap();
        let expected = 0.5 - lr * 1.0 / (1.0 + 1e-8);
        assert!((store.value("x").unwrap().data()[0] - expected).abs() <= 1e-12);
        assert_eq!(store.get("x").unwrap().grad[0], 0.0, "gradients are zeroed");
    }

    #[test]
    fn frozen_parameters_are_not_updated() {
        let mut store = scalar_store(0.5);
        store.freeze("x").unwrap();
        store.get_mut("x").unwrap().grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, 1e-2).unwrap();
        assert_eq!(store.value("x").unwrap().data()[0], 0.5);
        assert_eq!(store.get("x").unwrap().grad[0], 0.0);
    }

    #[test]
    fn schedule_restarts_and_doubles() {
        let s = LrSchedule::new(2e-4);
        assert_eq!(s.lr_at(0), 2e-4);
        assert!((s.lr_at(5) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(10), 2e-4);
        assert_eq!(s.cycle_position(29), (19, 20));
        assert_eq!(s.cycle_position(30), (0, 40));
        for e in 0..200 {
            let lr = s.lr_at(e);
            assert!((s.min_lr..=s.base_lr).contains(&lr));
        }
    }
}
