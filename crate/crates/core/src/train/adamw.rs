//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::OptimizerSnapshot;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Moment estimates for every parameter of one store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWParams,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, hyper: AdamWParams) -> Self {
        let zeros = || store.leaves().iter().map(|l| Tensor::zeros(l.value.shape())).collect();
        AdamW { hyper, step: 0, m: zeros(), v: zeros() }
    }

    /// Restores moments saved by [`AdamW::snapshot`], checking them against `store`.
    pub fn restore(store: &ParamStore, hyper: AdamWParams, snap: OptimizerSnapshot) -> Result<Self> {
        let opt = AdamW { hyper, step: snap.step, m: snap.m, v: snap.v };
        opt.check_shapes(store)?;
        Ok(opt)
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot { step: self.step, m: self.m.clone(), v: self.v.clone() }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let leaves = store.leaves();
        if self.m.len() != leaves.len() || self.v.len() != leaves.len() {
            return Err(Error::contract(
                "adamw",
                format!("optimizer tracks {} tensors, store has {}", self.m.len(), leaves.len()),
            ));
        }
        for ((leaf, m), v) in leaves.iter().zip(&self.m).zip(&self.v) {
            if m.shape() != leaf.value.shape() || v.shape() != leaf.value.shape() || leaf.grad.shape() != leaf.value.shape() {
                return Err(Error::contract(
                    "adamw",
                    format!("state for `{}` has shape {:?}, parameter {:?}", leaf.name, m.shape(), leaf.value.shape()),
                ));
            }
        }
        Ok(())
    }

    /// One update from the gradients accumulated in `store`:
    /// `θ ← θ − lr·wd·θ`, then the bias-corrected Adam step.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.check_shapes(store)?;
        self.step += 1;
        let AdamWParams { beta1, beta2, eps, weight_decay } = self.hyper;
        let t = self.step as f64;
        let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
        let decay = lr * weight_decay;
        for ((leaf, m), v) in store.leaves_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = leaf.grad.data();
            let (theta, m, v) = (leaf.value.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..theta.len() {
                let g = grads[i];
                theta[i] -= decay * theta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let (mh, vh) = (m[i] / c1, v[i] / c2);
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
