//! SGD with decoupled weight decay, and Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockId, IntentSpaceModel, ParamGroup};

use super::ParamSelector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerConfig {
    Sgd { lr: f64, weight_decay: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig::Sgd {
            lr: 0.05,
            weight_decay: 1e-5,
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, weight_decay } => lr > 0.0 && weight_decay >= 0.0,
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// `θ ← θ − lr·g − lr·wd·θ`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.len() != params.len() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
        state.t = 0;
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Applies updates to the selected blocks of a model, keeping per-block
/// Adam moments across calls.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    adam: BTreeMap<BlockId, AdamState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            adam: BTreeMap::new(),
        })
    }

    pub fn step(&mut self, model: &mut IntentSpaceModel, grads: &IntentSpaceModel, selector: &ParamSelector) -> Result<()> {
        let grad_blocks: BTreeMap<BlockId, &[f64]> = grads.blocks().into_iter().collect();
        for (id, params) in model.blocks_mut() {
            if !selector.includes(id) {
                continue;
            }
            let g = grad_blocks
                .get(&id)
                .ok_or_else(|| Error::Shape(format!("no gradient for block {id:?}")))?;
            match self.config {
                OptimizerConfig::Sgd { lr, weight_decay } => {
                    let wd = match id.group() {
                        ParamGroup::Bases | ParamGroup::Input | ParamGroup::Scorer => weight_decay,
                        ParamGroup::Coordinates | ParamGroup::Expansions => 0.0,
                    };
                    sgd_step(params, g, lr, wd)?;
                }
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let state = self.adam.entry(id).or_default();
                    adam_step(params, g, state, lr, beta1, beta2, eps)?;
                }
            }
            if params.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("update produced non-finite values in {id:?}")));
            }
        }
        Ok(())
    }
}
