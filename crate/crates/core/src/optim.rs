//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &BTreeMap<String, Tensor<S>>, lr: f64) -> Result<()> {
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one, eps) = (S::one(), S::lit(c.eps));
        let step_size = S::lit(lr / bc1);
        let inv_bc2 = S::lit(1.0 / bc2);
        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != grad.shape() {
                return Err(AvsError::ShapeMismatch(format!("gradient for {name}: {:?} vs {:?}", grad.shape(), p.shape())));
            }
            if !grad.is_finite() {
                return Err(AvsError::NonFinite(format!("gradient for {name}")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (one - b1) * gr;
                *vi = b2 * *vi + (one - b2) * gr * gr;
                *w = *w - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
