//! Adam and Adagrad over [`TensorSet`]s. Both minimize: pass the gradient
//! of the loss (negate a reward gradient before calling).

use crate::tensor::TensorSet;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: TensorSet,
    v: TensorSet,
}

impl Adam {
    pub fn new(params: &TensorSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Updates tensors whose `trainable` flag is set; the others keep their
    /// moments at zero.
    pub fn step(&mut self, params: &mut TensorSet, grads: &TensorSet, trainable: &[bool]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.tensors.iter_mut().enumerate() {
            if !trainable.get(i).copied().unwrap_or(true) {
                continue;
            }
            let g = &grads.tensors[i].data;
            let m = &mut self.m.tensors[i].data;
            let v = &mut self.v.tensors[i].data;
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    accum: TensorSet,
}

impl Adagrad {
    pub fn new(params: &TensorSet, lr: f64) -> Self {
        Adagrad {
            lr,
            eps: 1e-8,
            accum: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut TensorSet, grads: &TensorSet) {
        for (i, p) in params.tensors.iter_mut().enumerate() {
            let g = &grads.tensors[i].data;
            let acc = &mut self.accum.tensors[i].data;
            for j in 0..p.data.len() {
                acc[j] += g[j] * g[j];
                p.data[j] -= self.lr * g[j] / (acc[j].sqrt() + self.eps);
            }
        }
    }
}
