//! Adam with bias correction.

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates aligned with a store's parameter order.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.iter().map(|p| vec![0.0; p.data().len()]).collect();
        let v = store.iter().map(|p| vec![0.0; p.data().len()]).collect();
        Self { cfg, t: 0, m, v }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Moment buffers for the `i`-th parameter, in store order.
    pub fn moments(&self, i: usize) -> (&[f32], &[f32]) {
        (&self.m[i], &self.v[i])
    }

    /// Rebuilds optimizer state, e.g. from a checkpoint.
    pub fn restore(cfg: AdamConfig, t: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Self {
        Self { cfg, t, m, v }
    }

    /// One update over every parameter from its accumulated gradient.
    /// Gradients are left untouched; the caller decides when to zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..self.m.len() {
            let p = store.get_mut(crate::params::ParamId(i));
            let g: Vec<f32> = p.grad().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
    }
}
