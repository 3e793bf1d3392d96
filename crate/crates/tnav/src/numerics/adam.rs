//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update over every parameter; requires populated gradients and
    /// zeroes them afterwards.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            let grad = tensor
                .grad
                .as_mut()
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            if m.len() != grad.len() {
                return Err(Error::InvalidArgument(format!(
                    "Adam moment size {} does not match `{}` ({})",
                    m.len(),
                    name,
                    grad.len()
                )));
            }
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
