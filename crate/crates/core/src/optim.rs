//! Adam over named parameters, with alias groups updated as one tensor.

use std::collections::BTreeMap;

use crate::datamodel::ModelBundle;
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn with_beta1(lr: f64, beta1: f64) -> Self {
        Adam { beta1, ..Adam::new(lr) }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `grads`.
    ///
    /// Gradients of aliased names are summed, the update is computed once on
    /// the canonical (first) name, and the result is copied to every alias,
    /// so aliased tensors stay bitwise identical.
    pub fn step(&mut self, bundle: &mut ModelBundle, grads: &BTreeMap<String, Matrix>) {
        self.step += 1;
        let merged = bundle.merge_alias_grads(grads);
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in &merged {
            let Some(p) = bundle.params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows, g.cols));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows, g.cols));
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        bundle.sync_aliases();
    }
}
