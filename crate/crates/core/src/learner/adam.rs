//! Adam optimizer with bias correction, one state per network.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one scalar per parameter, in the
/// fixed [`Mlp::params_mut`] order, plus the shared step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn zeros_like(net: &Mlp) -> Self {
        let n = net.param_count();
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam step over every parameter of `net`, in place. `grads` must
/// come from the same architecture (parameter iteration orders agree).
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64) {
    debug_assert_eq!(net.param_count(), state.m.len(), "optimizer matches the network");
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    for ((param, &g), (m, v)) in net
        .params_mut()
        .zip(grads.params())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *param -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
