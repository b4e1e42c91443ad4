use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// A trainable tensor with its gradient buffer and Adam moment slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let n = value.len();
        Parameter { name: name.into(), value, grad, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Uniform in ±1/√fan_in.
    pub fn fan_in_uniform<R: Rng>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape"))
    }

    pub fn normal<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over every parameter; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params.iter_mut() {
            let Parameter { value, grad, m, v, .. } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * *g;
                *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            }
        }
    }
}

/// Free-function form of [`Adam::step`] for callers holding the step counter themselves.
pub fn adam_step(params: &mut [&mut Parameter], adam: &mut Adam) {
    adam.step(params);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Parameter {
        Parameter::new("w", Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar(0.7);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [&mut p]);
        }
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let mut prev = p.value.data()[0];
        for _ in 0..50 {
            p.grad.data_mut()[0] = 0.3;
            adam.step(&mut [&mut p]);
            let now = p.value.data()[0];
            assert!(now < prev);
            assert_eq!(p.grad.data()[0], 0.0);
            prev = now;
        }
    }

    #[test]
    fn matches_hand_trace() {
        // Hand trace for w0 = 1, lr = 0.1, gradients 0.5, -1.0, 2.0.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let grads = [0.5, -1.0, 2.0];
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            expected.push(w);
        }
        // First step of Adam moves by exactly lr·sign(g) up to eps.
        assert!((expected[0] - 0.9).abs() < 1e-8);

        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig { lr, beta1: b1, beta2: b2, eps });
        for (g, e) in grads.iter().zip(&expected) {
            p.grad.data_mut()[0] = *g;
            adam.step(&mut [&mut p]);
            assert!((p.value.data()[0] - e).abs() < 1e-12);
        }
    }
}
