//! SGD with Nesterov momentum and cosine-annealed learning rate.

use super::ParamStore;
use ndarray::ArrayD;
use std::collections::HashMap;

/// Nesterov-momentum SGD:
/// `v <- mu*v + g; w <- w - lr*(g + mu*v)`.
#[derive(Debug, Clone)]
pub struct SgdNesterov {
    pub momentum: f64,
    velocity: HashMap<String, ArrayD<f64>>,
}

impl SgdNesterov {
    pub fn new(momentum: f64) -> Self {
        SgdNesterov {
            momentum,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, name: &str, grad: &ArrayD<f64>, lr: f64) {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
        *v *= self.momentum;
        *v += grad;
        let update = grad + &(&*v * self.momentum);
        let mut w = store.get(name).clone();
        w -= &(&update * lr);
        store.set(name, w);
    }
}

/// Cosine annealing from `lr_max` to `lr_min` over `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_max;
        }
        let t = (step.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
