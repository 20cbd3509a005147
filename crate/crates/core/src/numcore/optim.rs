use crate::error::{Error, Result};
use crate::numcore::ParamVector;
use serde::{Deserialize, Serialize};

/// SGD hyperparameters shared by clients and the server step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        SgdHyper {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
        }
    }
}

/// Momentum-SGD state. Velocity starts at zero and has the parameter length.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: SgdHyper,
    velocity: ParamVector,
}

impl OptimizerState {
    pub fn new(hyper: SgdHyper, param_len: usize) -> Result<Self> {
        if hyper.learning_rate <= 0.0 {
            return Err(Error::argument("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&hyper.momentum) {
            return Err(Error::argument("momentum must be in [0, 1)"));
        }
        if hyper.weight_decay < 0.0 {
            return Err(Error::argument("weight_decay must be nonnegative"));
        }
        Ok(OptimizerState {
            hyper,
            velocity: ParamVector::zeros(param_len),
        })
    }

    pub fn reset_velocity(&mut self) {
        self.velocity = ParamVector::zeros(self.velocity.len());
    }

    pub fn velocity(&self) -> &ParamVector {
        &self.velocity
    }
}

/// One coupled-weight-decay momentum SGD step, in place:
/// `g' = g + wd*p; v = m*v + g'; p = p - lr*v`.
pub fn sgd_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::argument(format!(
            "sgd_step length mismatch: params {}, grads {}, velocity {}",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let SgdHyper {
        learning_rate,
        momentum,
        weight_decay,
    } = state.hyper;
    let p = params.values_mut();
    let g = grads.values();
    let v = state.velocity.values_mut();
    for i in 0..p.len() {
        let g_eff = g[i] + weight_decay * p[i];
        v[i] = momentum * v[i] + g_eff;
        p[i] -= learning_rate * v[i];
    }
    Ok(())
}
