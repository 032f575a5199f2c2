//! AMSGrad: Adam moments with a running element-wise maximum of the second
//! moment in the denominator. No bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "need lr >= 0 and eps > 0, got lr={} eps={}",
                self.lr, self.eps
            )));
        }
        Ok(())
    }
}

/// Per-tensor moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub vhat: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            vhat: vec![0.0; len],
        }
    }
}

/// One AMSGrad update of `theta` in place.
pub fn amsgrad_step(theta: &mut [f64], grad: &[f64], st: &mut Moments, cfg: &OptimizerConfig) {
    assert_eq!(theta.len(), grad.len());
    for i in 0..theta.len() {
        let g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        st.vhat[i] = st.vhat[i].max(st.v[i]);
        theta[i] -= cfg.lr * st.m[i] / (st.vhat[i].sqrt() + cfg.eps);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmsGrad {
    pub cfg: OptimizerConfig,
    pub state: BTreeMap<String, Moments>,
}

impl AmsGrad {
    pub fn new(cfg: OptimizerConfig, params: &ModelParams) -> Self {
        let state = params
            .tensors()
            .iter()
            .map(|(k, t)| (k.clone(), Moments::zeros(t.len())))
            .collect();
        Self { cfg, state }
    }

    /// Updates every tensor of `params` and rounds parameters and moments to
    /// 32-bit precision, the precision they are checkpointed at.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, t) in params.tensors_mut() {
            let g = grads.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            let st = self
                .state
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(format!("optimizer state for {name}")))?;
            amsgrad_step(t.data_mut(), g, st, &self.cfg);
            for buf in [t.data_mut(), &mut st.m, &mut st.v, &mut st.vhat] {
                for v in buf.iter_mut() {
                    *v = *v as f32 as f64;
                }
            }
        }
        Ok(())
    }
}
