use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("Adam eps and weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Adam over a fixed set of parameters of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub t: u64,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        let m: Vec<Tensor> = ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        Ok(AdamState {
            hyper,
            t: 0,
            v: m.clone(),
            m,
            ids,
        })
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn moments(&self) -> impl Iterator<Item = (ParamId, &Tensor, &Tensor)> {
        self.ids
            .iter()
            .zip(&self.m)
            .zip(&self.v)
            .map(|((&id, m), v)| (id, m, v))
    }

    /// Restores moments saved by [`AdamState::moments`], in the same order.
    pub fn set_moments(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.ids.len() || v.len() != self.ids.len() {
            return Err(Error::Format(format!(
                "optimizer state for {} parameters, expected {}",
                m.len(),
                self.ids.len()
            )));
        }
        for ((a, b), old) in m.iter().zip(&v).zip(&self.m) {
            if a.shape() != old.shape() || b.shape() != old.shape() {
                return Err(Error::dim("adam state", a.shape(), old.shape()));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One bias-corrected update from the gradients currently held in
    /// `store`. Every gradient is checked before any parameter moves.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.ids {
            if !store.grad(id).is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for parameter {}",
                    store.name(id)
                )));
            }
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let (theta, grad) = store.value_and_grad_mut(id);
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, &g0), mi), vi) in theta.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                let g = g0 + h.weight_decay * *p;
                *mi = h.beta1 * *mi + (1.0 - h.beta1) * g;
                *vi = h.beta2 * *vi + (1.0 - h.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}
