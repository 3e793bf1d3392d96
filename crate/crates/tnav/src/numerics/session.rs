//! Binds a [`ParamSet`] to a fresh tape for one forward/backward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::ParamSet;

pub type GradMap = BTreeMap<String, Vec<f64>>;

pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamSet,
    bindings: BTreeMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Session {
            tape: Tape::new(),
            params,
            bindings: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    /// Tape leaf for a named parameter. Repeated calls within one pass return
    /// the same node, so gradients accumulate correctly.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?;
        let v = self.tape.leaf(t.shape.clone(), t.data.clone())?;
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    /// Reverse pass from a scalar loss; returns gradients for every parameter
    /// touched during the forward pass.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let grads = self.tape.backward(loss)?;
        let mut out = GradMap::new();
        for (name, &var) in &self.bindings {
            out.insert(name.clone(), grads[var.0].clone());
        }
        Ok(out)
    }
}

/// Convenience: run one forward/backward pass and fold the gradients into the
/// parameter set. Returns the loss value.
pub fn accumulate_loss_grads(
    params: &mut ParamSet,
    forward: impl FnOnce(&mut Session) -> Result<Var>,
) -> Result<f64> {
    let (loss_value, grads) = {
        let mut sess = Session::new(params);
        let loss = forward(&mut sess)?;
        let v = sess.tape.value(loss);
        if !v.is_finite() {
            return Err(Error::Diverged(format!("loss = {v}")));
        }
        (v, sess.backward(loss)?)
    };
    params.accumulate_grads(&grads)?;
    Ok(loss_value)
}
