//! Adam optimizer over the network's parameter slices.

use crate::net::{NetGrads, QNetwork};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators, bias-corrected at each step.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &QNetwork) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// One Adam update of every network parameter.
pub fn adam_step(net: &mut QNetwork, grads: &NetGrads, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let bias1 = 1.0 - BETA1.powi(state.t as i32);
    let bias2 = 1.0 - BETA2.powi(state.t as i32);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[li];
        let (mw, mb) = &mut state.m[li];
        let (vw, vb) = &mut state.v[li];
        update_slice(&mut layer.weights, gw, mw, vw, lr, bias1, bias2);
        update_slice(&mut layer.bias, gb, mb, vb, lr, bias1, bias2);
    }
}
