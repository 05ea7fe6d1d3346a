use crate::model::ModelParams;
use crate::{Error, Result};

use super::TrainConfig;

/// Adam moments and the current learning rate of each parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr_head: f64,
    pub lr_backbone: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, _, d)| vec![0.0; d.len()])
            .collect();
        Self {
            v: zeros.clone(),
            m: zeros,
            step: 0,
            lr_head: config.lr_head,
            lr_backbone: config.lr_backbone,
        }
    }

    /// Multiplies both group learning rates by `factor`.
    pub fn decay(&mut self, factor: f64) {
        self.lr_head *= factor;
        self.lr_backbone *= factor;
    }
}

/// Tensors named `stem.*` form the backbone group.
pub fn is_backbone(name: &str) -> bool {
    name.starts_with("stem.")
}

/// One bias-corrected Adam update with L2 weight decay added to the gradients.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut slots = params.tensors_mut();
    if grad_tensors.len() != slots.len() || state.m.len() != slots.len() {
        return Err(Error::Shape("gradient, parameter and optimizer tensors differ".into()));
    }
    for ((name, _, g), (pname, _)) in grad_tensors.iter().zip(&slots) {
        if name != pname {
            return Err(Error::Shape(format!("gradient tensor {name} paired with {pname}")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in tensor `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, ((name, theta), (_, _, g))) in slots.iter_mut().zip(&grad_tensors).enumerate() {
        let lr = if is_backbone(name) { state.lr_backbone } else { state.lr_head };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..theta.len() {
            let gi = g[i] + config.weight_decay * theta[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
