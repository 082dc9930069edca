//! Meta-optimizers over named parameter stores. Moments are kept in f64
//! regardless of the parameter dtype so that long runs and the scalar
//! reference oracle agree; updates are computed in f64 and cast once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// decoupled decay: p -= lr * weight_decay * p, outside the moments
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step<E: Scalar>(
        &mut self,
        store: &mut ParamStore<E>,
        grads: &BTreeMap<String, Tensor<E>>,
    ) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (name, param) in store.iter_mut() {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for parameter {name}")))?;
            if grad.shape() != param.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let n = param.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for ((p, &g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g.to_f64();
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * g;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * g * g;
                let step = (*mi / c1) / ((*vi / c2).sqrt() + self.cfg.eps);
                let pv = p.to_f64();
                *p = E::from_f64(pv - self.cfg.lr * (step + self.cfg.weight_decay * pv));
            }
        }
        Ok(())
    }
}

/// Sign of an exponential moving average of the gradient: the escape
/// mechanism study swaps this in for Adam to show that magnitude
/// normalization, not momentum, is what shortens loss plateaus.
#[derive(Debug, Clone)]
pub struct SignEma {
    pub lr: f64,
    pub beta: f64,
    m: BTreeMap<String, Vec<f64>>,
}

impl SignEma {
    pub fn new(lr: f64, beta: f64) -> Self {
        SignEma { lr, beta, m: BTreeMap::new() }
    }

    pub fn step<E: Scalar>(
        &mut self,
        store: &mut ParamStore<E>,
        grads: &BTreeMap<String, Tensor<E>>,
    ) -> Result<()> {
        for (name, param) in store.iter_mut() {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for parameter {name}")))?;
            if grad.shape() != param.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; param.numel()]);
            for ((p, &g), mi) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()) {
                *mi = self.beta * *mi + (1.0 - self.beta) * g.to_f64();
                let sign = if *mi > 0.0 {
                    1.0
                } else if *mi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *p = E::from_f64(p.to_f64() - self.lr * sign);
            }
        }
        Ok(())
    }
}
