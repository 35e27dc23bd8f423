use serde::{Deserialize, Serialize};

use super::model::{Dense, Gradients, ModelParams};
use crate::error::{Error, Result};

/// SGD with classic momentum: `v ← μ·v + g`, `p ← p − η·v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    velocity: Vec<Dense>,
    lr: f64,
    momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(OptimizerState {
            velocity: Gradients::zeros_like(params).layers().to_vec(),
            lr,
            momentum,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Dense] {
        &self.velocity
    }
}

pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if !grads.congruent_with(params) || opt.velocity.len() != params.layers().len() {
        return Err(Error::shape(
            "sgd_step",
            "gradients and velocity congruent with parameters",
            "mismatched layer shapes",
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient for {:?} parameters",
            params.role()
        )));
    }
    let (lr, mu) = (opt.lr, opt.momentum);
    for ((layer, g), v) in params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers())
        .zip(opt.velocity.iter_mut())
    {
        let p = layer.weight.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
        let gv = g.weight.as_slice().iter().chain(g.bias.iter());
        let vv = v.weight.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
        for ((p, &g), v) in p.zip(gv).zip(vv) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}
