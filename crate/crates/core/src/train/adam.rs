use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamId, ParamStore};

/// Moment buffers for every trainable parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let (m, v) = store
            .iter()
            .map(|(_, p)| {
                let n = if p.trainable { p.value.numel() } else { 0 };
                (vec![0.0; n], vec![0.0; n])
            })
            .unzip();
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m,
            v,
        }
    }
}

/// One bias-corrected Adam update of the listed parameters. Every
/// gradient is checked before anything is written, so a non-finite value
/// leaves the store untouched.
pub fn adam_step(store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)], state: &mut AdamState, lr: f64) -> Result<()> {
    for (id, g) in grads {
        let p = store.get(*id);
        if !p.trainable || g.len() != p.value.numel() {
            return Err(Error::InvalidArgument(format!(
                "gradient for `{}` has {} elements, parameter has {}{}",
                p.name,
                g.len(),
                p.value.numel(),
                if p.trainable { "" } else { " and is not trainable" }
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of `{}` element {i} is {} at step {}",
                p.name,
                g[i],
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (id, g) in grads {
        let i = id.index();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = store.value_mut(*id).data_mut();
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            w[k] -= lr * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
