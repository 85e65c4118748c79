use crate::nn::params::ParamStore;
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    /// Multiplier on the scheduled rate; 1.0 reproduces the plain schedule.
    pub lr_scale: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 4000,
            d_model: 64,
            lr_scale: 1.0,
        }
    }
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`, for `step ≥ 1`.
pub fn noam_learning_rate(d_model: usize, warmup_steps: u64, step: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup_steps.max(1) as f64;
    (d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
}

/// Adam with bias correction, driven by [`noam_learning_rate`].
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Tensor<F>>, second: Vec<Tensor<F>>) -> Self {
        Adam {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.first, &self.second)
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_scale * noam_learning_rate(self.config.d_model, self.config.warmup_steps, self.step.max(1))
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore<F>) {
        self.step += 1;
        let c = self.config;
        let lr = c.lr_scale * noam_learning_rate(c.d_model, c.warmup_steps, self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = F::from_f64_lossy(lr * bc2.sqrt() / bc1);
        let (b1, b2) = (F::from_f64_lossy(c.beta1), F::from_f64_lossy(c.beta2));
        let eps = F::from_f64_lossy(c.eps * bc2.sqrt());
        let one = F::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() + eps);
            }
        }
        params.zero_grads();
    }
}
