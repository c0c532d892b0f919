use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Scalar;

/// Convolution kernels `(out, in, k, k)` and biases with their gradients and
/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
    pub m_w: Vec<T>,
    pub v_w: Vec<T>,
    pub m_b: Vec<T>,
    pub v_b: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        let nw = out_ch * in_ch * k * k;
        let z = |n| vec![T::zero(); n];
        LayerParams {
            out_ch,
            in_ch,
            k,
            weight: z(nw),
            bias: z(out_ch),
            grad_w: z(nw),
            grad_b: z(out_ch),
            m_w: z(nw),
            v_w: z(nw),
            m_b: z(out_ch),
            v_b: z(out_ch),
            step: 0,
        }
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn he_normal<R: Rng>(out_ch: usize, in_ch: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(out_ch, in_ch, k);
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in p.weight.iter_mut() {
            *w = T::of(normal.sample(rng));
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.iter_mut().for_each(|g| *g = T::zero());
        self.grad_b.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn step<T: Scalar>(&self, p: &mut LayerParams<T>) {
        adam_step(p, self.lr, self.beta1, self.beta2, self.eps);
    }
}

/// Bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step<T: Scalar>(p: &mut LayerParams<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    p.step += 1;
    let t = p.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (ob1, ob2) = (T::one() - b1, T::one() - b2);
    // lr * m_hat / (sqrt(v_hat) + eps) = step * m / (sqrt(v / c2) + eps)
    let step = T::of(lr / c1);
    let inv_c2 = T::of(1.0 / c2);
    let eps = T::of(eps);
    let update = |x: &mut [T], g: &mut [T], m: &mut [T], v: &mut [T]| {
        for i in 0..x.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + ob1 * gi;
            v[i] = b2 * v[i] + ob2 * gi * gi;
            x[i] -= step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            g[i] = T::zero();
        }
    };
    update(&mut p.weight, &mut p.grad_w, &mut p.m_w, &mut p.v_w);
    update(&mut p.bias, &mut p.grad_b, &mut p.m_b, &mut p.v_b);
}
