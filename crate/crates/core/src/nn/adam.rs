//! Adam optimizer over a parameter store (descends the accumulated
//! gradients).

use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = (0..store.len())
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        let v = (0..store.len())
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    /// One update from the currently accumulated gradients. Parameters whose
    /// gradient is identically zero still advance their moment estimates,
    /// which keeps the update independent of how gradients were batched.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in 0..store.len() {
            let grad = store.grad(id).data().to_vec();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let theta = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
