use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    #[serde(skip)]
    pub m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update. Frozen parameters are skipped. All
/// gradients are checked before anything is written, and they are zeroed
/// once the step is applied.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &mut [Tensor],
    state: &mut AdamState,
) -> Result<(), TrainError> {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    for (id, g) in params.ids().zip(grads.iter()) {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: params.name(id).to_string(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (id, g) in ids.into_iter().zip(grads.iter_mut()) {
        if !params.is_frozen(id) {
            let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
            let p = params.get_mut(id).data_mut();
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = state.beta1 * *m + (1.0 - state.beta1) * g;
                *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
        g.data_mut().fill(0.0);
    }
    Ok(())
}
