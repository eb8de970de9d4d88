//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.len()])).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update using gradients keyed by parameter name.
    pub fn step_with(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in params.iter() {
            let m = self
                .m
                .get(name)
                .ok_or_else(|| Error::invalid(format!("optimizer has no state for parameter {name:?}")))?;
            if m.len() != p.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape.clone(),
                    rhs: vec![m.len()],
                });
            }
            if let Some(g) = grads.get(name) {
                if g.shape != p.shape {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: p.shape.clone(),
                        rhs: g.shape.clone(),
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let m = self.m.get_mut(name).expect("checked");
            let v = self.v.get_mut(name).expect("checked");
            let zero;
            let g = match grads.get(name) {
                Some(g) => &g.data,
                None => {
                    zero = vec![0.0; p.len()];
                    &zero
                }
            };
            for i in 0..p.data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// One update from tape gradients, given the name-to-leaf binding used
    /// for the forward pass.
    pub fn step(&mut self, params: &mut ParamSet, bound: &BTreeMap<String, Var>, grads: &Grads) -> Result<()> {
        let g = collect_grads(params, bound, grads);
        self.step_with(params, &g)
    }
}

/// Gradients for every parameter (zero when unused).
pub fn collect_grads(params: &ParamSet, bound: &BTreeMap<String, Var>, grads: &Grads) -> BTreeMap<String, Tensor> {
    params
        .iter()
        .map(|(k, t)| {
            let g = match bound.get(k) {
                Some(&v) => grads.get(v, t),
                None => Tensor::zeros(&t.shape),
            };
            (k.clone(), g)
        })
        .collect()
}
