//! First-order optimizers over flat parameter slots.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; one moment pair per registered slot.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, slot_sizes: &[usize]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advances the shared step counter; call once per iteration before `update`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, params: &mut [f32], grads: &[f32]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// SGD with classical momentum and optional L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f32,
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32, slot_sizes: &[usize]) -> Self {
        Sgd { lr, momentum, weight_decay, velocity: slot_sizes.iter().map(|&n| vec![0.0; n]).collect() }
    }

    pub fn update(&mut self, slot: usize, params: &mut [f32], grads: &[f32]) {
        let vel = &mut self.velocity[slot];
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            vel[i] = self.momentum * vel[i] + g;
            params[i] -= self.lr * vel[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &[2]);
        let mut p = [1.0, -1.0];
        opt.begin_step();
        opt.update(0, &mut p, &[3.0, -0.001]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-5);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut sgd = Sgd::new(0.0, 0.2, 0.0, &[3]);
        let mut p = [0.5, 1.5, -2.0];
        sgd.update(0, &mut p, &[1.0, 2.0, 3.0]);
        assert_eq!(p, [0.5, 1.5, -2.0]);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut sgd = Sgd::new(0.1, 0.5, 0.0, &[1]);
        let mut p = [0.0];
        sgd.update(0, &mut p, &[1.0]);
        sgd.update(0, &mut p, &[1.0]);
        // v1 = 1, v2 = 1.5
        assert!((p[0] + 0.25).abs() < 1e-7);
    }
}
