use crate::error::{Error, Result};
use crate::tensorcore::ParamStore;

use super::config::AdamConfig;

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`. Gradients are
/// checked first; a non-finite entry aborts without touching any parameter.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    config: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::contract(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for ((name, t), g) in store.iter().zip(grads) {
        if g.len() != t.numel() {
            return Err(Error::shape("adam_step", t.shape(), &[g.len()]));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} at element {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (k, (_, param)) in store.tensors_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        for (i, w) in param.data_mut().iter_mut().enumerate() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps);
            *w -= lr * (update + config.weight_decay * *w);
        }
    }
    Ok(())
}
