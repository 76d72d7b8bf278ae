//! Adam.

use alloc::string::ToString;

use crate::{Error, Gradients, ParameterStore, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update of every parameter in `store`.
    ///
    /// Every parameter must have a gradient; a parameter that no recorded
    /// operation touched is reported by name.
    pub fn step(&self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Dimension {
                op: "adam",
                detail: alloc::format!("{} gradients for {} parameters", grads.len(), store.len()),
            });
        }
        for id in store.ids() {
            if grads.get(id).is_none() {
                return Err(Error::MissingGradient(store.name(id).to_string()));
            }
        }
        let t = store.bump_step() as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let g = grads.get(crate::ParamId(i)).expect("checked above");
            for j in 0..g.len() {
                let gj = g.data()[j];
                let m = self.beta1 * p.m.data()[j] + (1.0 - self.beta1) * gj;
                let v = self.beta2 * p.v.data()[j] + (1.0 - self.beta2) * gj * gj;
                p.m.data_mut()[j] = m;
                p.v.data_mut()[j] = v;
                let update = self.lr * (m / c1) / (libm::sqrt(v / c2) + self.eps);
                p.value.data_mut()[j] -= update;
            }
        }
        Ok(())
    }
}
