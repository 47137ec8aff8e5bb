use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9, warmup: 400, clip: 1.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam: lr > 0 and betas in [0, 1) required".into()));
        }
        if self.clip < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("adam: clip >= 0 and eps > 0 required".into()));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then decay with the inverse square root of
    /// the step. `step` counts from 1.
    pub fn lr_at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter with a gradient; names starting with a
    /// `frozen` prefix are left untouched.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, frozen: &[&str]) -> Result<()> {
        let live = |n: &str| !frozen.iter().any(|p| n.starts_with(p));
        let mut norm2 = 0.0;
        for (_, g) in grads.iter().filter(|(n, _)| live(n)) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric { op: "adam" });
            }
            norm2 += g.iter().map(|x| x * x).sum::<f64>();
        }
        let c = &self.config;
        let scale = if c.clip > 0.0 && norm2.sqrt() > c.clip { c.clip / norm2.sqrt() } else { 1.0 };
        self.step += 1;
        let lr = c.lr_at(self.step);
        let (b1, b2) = (c.beta1, c.beta2);
        let bc1 = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32);
        for (name, g) in grads.iter().filter(|(n, _)| live(n)) {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * scale;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }

    /// Moments as tensors named `m.<param>` / `v.<param>`.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (prefix, map) in [("m", &self.m), ("v", &self.v)] {
            for (k, x) in map {
                out.insert(format!("{prefix}.{k}"), Tensor::new(vec![x.len()], x.clone()).expect("1-d"));
            }
        }
        out
    }

    pub fn from_tensors(config: AdamConfig, step: u64, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut adam = Adam::new(config);
        adam.step = step;
        for (k, t) in tensors {
            let data = t.into_data();
            if let Some(name) = k.strip_prefix("m.") {
                adam.m.insert(name.to_string(), data);
            } else if let Some(name) = k.strip_prefix("v.") {
                adam.v.insert(name.to_string(), data);
            } else {
                return Err(Error::Format(format!("unexpected optimizer tensor `{k}`")));
            }
        }
        Ok(adam)
    }
}
