use alloc::vec;
use alloc::vec::Vec;

/// Adam with a linearly decaying learning rate and no warmup:
/// step `s` of `total` uses `lr * (1 - s / total)`.
pub(crate) struct Adam {
    lr: f64,
    total_steps: usize,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub(crate) fn new(len: usize, lr: f64, total_steps: usize) -> Self {
        Self { lr, total_steps: total_steps.max(1), step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub(crate) fn current_lr(&self) -> f64 {
        self.lr * (1.0 - self.step as f64 / self.total_steps as f64)
    }

    pub(crate) fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(BETA1, t as f64);
        let bc2 = 1.0 - libm::pow(BETA2, t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / bc1) / (libm::sqrt(*v / bc2) + EPS);
        }
    }
}
