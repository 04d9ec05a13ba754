//! Adam with the universal defaults (beta1 0.9, beta2 0.999, eps 1e-8).

use std::collections::HashMap;

use crate::autodiff::{ParamId, ParamStore};
use crate::numerics::Matrix;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: HashMap<ParamId, (Matrix, Matrix)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        assert!(lr >= 0.0);
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over the listed parameters, consuming the
    /// gradients currently in the store.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for &id in ids {
            let g = store.grad(id).clone();
            let (rows, cols) = g.shape();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
            let mut value = store.value(id).clone();
            for i in 0..rows {
                for j in 0..cols {
                    let gij = g.get(i, j);
                    let mi = self.beta1 * m.get(i, j) + (1.0 - self.beta1) * gij;
                    let vi = self.beta2 * v.get(i, j) + (1.0 - self.beta2) * gij * gij;
                    m.set(i, j, mi);
                    v.set(i, j, vi);
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    value.set(
                        i,
                        j,
                        value.get(i, j) - self.lr * m_hat / (v_hat.sqrt() + self.epsilon),
                    );
                }
            }
            store.set_value(id, value);
        }
    }
}
