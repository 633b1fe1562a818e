use serde::{Deserialize, Serialize};

/// First/second moment accumulators for one optimized variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_hyperparams(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of `variable` in place.
///
/// # Panics
///
/// If `variable`, `gradient` and the state moments differ in length.
pub fn adam_step(state: &mut AdamState, variable: &mut [f64], gradient: &[f64], lr: f64) {
    assert_eq!(variable.len(), gradient.len(), "variable/gradient length");
    assert_eq!(variable.len(), state.m.len(), "variable/state length");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..variable.len() {
        let g = gradient[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        variable[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}
