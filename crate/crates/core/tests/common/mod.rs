//! Reference computations shared by the integration tests.
#![allow(dead_code)]

use losspaint::nn::{HiddenActivation, NetworkParams, NetworkSpec, OutputActivation};

/// Straight-line forward pass written from the layer definition.
pub fn oracle_forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &[f64],
    shift: &[f64],
) -> Vec<f64> {
    let mut a = x.to_vec();
    let last = params.layers().len() - 1;
    for (idx, layer) in params.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.fan_out);
        for j in 0..layer.fan_out {
            let mut s = layer.biases[j];
            if idx == 0 && j < shift.len() {
                s += shift[j];
            }
            for (i, ai) in a.iter().enumerate() {
                s += ai * layer.weight(i, j);
            }
            next.push(if idx == last {
                match spec.output_activation {
                    OutputActivation::Identity => s,
                    OutputActivation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                }
            } else {
                match spec.hidden_activation {
                    HiddenActivation::Tanh => s.tanh(),
                    HiddenActivation::Relu => s.max(0.0),
                }
            });
        }
        a = next;
    }
    a
}

pub fn oracle_objective(
    spec: &NetworkSpec,
    params: &NetworkParams,
    xs: &[Vec<f64>],
    ts: &[Vec<f64>],
) -> f64 {
    xs.iter()
        .zip(ts)
        .map(|(x, t)| {
            oracle_forward(spec, params, x, &[])
                .iter()
                .zip(t)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
        })
        .sum::<f64>()
        / xs.len() as f64
}
