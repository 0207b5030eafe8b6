//! Adam with optional global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Clip the global gradient norm to this value; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// Optimizer state: first and second moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &mut Gradients<T>) -> Result<T> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let norm = if self.config.clip_norm > 0.0 {
            grads.clip_global_norm(lit(self.config.clip_norm))
        } else {
            grads.global_norm()
        };
        self.step += 1;
        let c = &self.config;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let lr: T = lit(c.learning_rate);
        let eps: T = lit(c.eps);
        let wd: T = lit(c.weight_decay);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = grads.get(id);
            let value = params.get_mut(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, (p, &gk)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            }
        }
        Ok(norm)
    }
}

impl<T: Scalar> Adam<T> {
    /// Stores the moments as `adam.first/<param>` and `adam.second/<param>`;
    /// the step count belongs in the checkpoint metadata.
    pub fn export(&self, params: &ParamStore<T>, ck: &mut Checkpoint<T>) {
        for (id, name, _) in params.iter() {
            ck.push(format!("adam.first/{name}"), self.first[id.index()].clone());
            ck.push(format!("adam.second/{name}"), self.second[id.index()].clone());
        }
    }

    /// Restores moments saved by [`Adam::export`].
    pub fn import(config: AdamConfig, step: u64, params: &ParamStore<T>, ck: &Checkpoint<T>) -> Result<Self> {
        let mut adam = Self::new(config, params);
        adam.step = step;
        for (id, name, t) in params.iter() {
            adam.first[id.index()] = ck.take(&format!("adam.first/{name}"), t.shape())?;
            adam.second[id.index()] = ck.take(&format!("adam.second/{name}"), t.shape())?;
        }
        Ok(adam)
    }
}
