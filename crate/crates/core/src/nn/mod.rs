//! Dense feed-forward network with explicit per-layer backprop.
//!
//! Parameters are split the way the constructions need them: the first layer
//! (`first_weights`, `first_biases`) and the rest of the network. Weight
//! matrices are stored row-major with shape `(fan_in, fan_out)`, so the first
//! layer computes `<x, W> + b` directly.
//!
//! Every parameter set also has a flat view. The flat order is, layer by
//! layer, weights (row-major) then biases. Optimizer moments, freeze masks and
//! checkpoints all use this order.

mod checkpoint;
mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{freeze_mask_apply, Algorithm, FreezeMask, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl HiddenActivation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => z.tanh(),
            HiddenActivation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - a * a,
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl std::str::FromStr for HiddenActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(HiddenActivation::Tanh),
            "relu" => Ok(HiddenActivation::Relu),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Architecture of the network: `input_dim -> hidden_widths... -> output_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            output_dim,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::config("network needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::config("all layer dimensions must be >= 1"));
        }
        Ok(())
    }

    /// Width `k` of the first hidden layer.
    pub fn first_width(&self) -> usize {
        self.hidden_widths[0]
    }

    /// `(fan_in, fan_out)` for every layer, first layer first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self
            .hidden_widths
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer. `weights` is row-major `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.fan_out + j]
    }

    fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// The full parameter set `{θ_W, θ_b, θ'}`: layer 0 holds `θ_W` and `θ_b`,
/// the remaining layers form `θ'`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

/// Per-parameter partial derivatives, shape-congruent with [`NetworkParams`].
pub type Gradient = NetworkParams;

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    pub fn from_layers(spec: &NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        let params = Self { layers };
        params.check_shape(spec)?;
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `θ_W`, row-major `d × k`.
    pub fn first_weights(&self) -> &[f64] {
        &self.layers[0].weights
    }

    pub fn first_weights_mut(&mut self) -> &mut [f64] {
        &mut self.layers[0].weights
    }

    /// `θ_b`, length `k`.
    pub fn first_biases(&self) -> &[f64] {
        &self.layers[0].biases
    }

    pub fn first_biases_mut(&mut self) -> &mut [f64] {
        &mut self.layers[0].biases
    }

    /// `θ'`: every layer after the first.
    pub fn rest(&self) -> &[Layer] {
        &self.layers[1..]
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn iter_flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter_flat().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.len()
            )));
        }
        for (p, &v) in self.iter_flat_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, spec: &NetworkSpec) -> Result<()> {
        let dims = spec.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "spec has {} layers, parameters have {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (idx, ((fan_in, fan_out), layer)) in dims.iter().zip(&self.layers).enumerate() {
            if layer.fan_in != *fan_in
                || layer.fan_out != *fan_out
                || layer.weights.len() != fan_in * fan_out
                || layer.biases.len() != *fan_out
            {
                return Err(Error::shape(format!(
                    "layer {idx}: expected {fan_in}x{fan_out}, found {}x{}",
                    layer.fan_in, layer.fan_out
                )));
            }
        }
        Ok(())
    }
}

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic for a fixed seed.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(spec);
    for layer in &mut params.layers {
        let std = 1.0 / (layer.fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut layer.weights {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

/// Scalar objective minimized by [`gradient`], summed over output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `Σ (p − t)²`
    Squared,
    /// `−Σ [t log p + (1−t) log(1−p)]`; predictions must lie in (0, 1).
    BinaryCrossEntropy,
}

impl Objective {
    fn value_and_grad(self, p: &[f64], t: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        match self {
            Objective::Squared => {
                for ((g, &p), &t) in grad.iter_mut().zip(p).zip(t) {
                    let r = p - t;
                    total += r * r;
                    *g = 2.0 * r;
                }
            }
            Objective::BinaryCrossEntropy => {
                for ((g, &p), &t) in grad.iter_mut().zip(p).zip(t) {
                    total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                    *g = -t / p + (1.0 - t) / (1.0 - p);
                }
            }
        }
        total
    }
}

/// One training example. `shift` is added to the first-layer pre-activation
/// (coordinates `0..shift.len()`), which is how slice coordinates `h` enter
/// the network without copying the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub shift: &'a [f64],
    pub target: &'a [f64],
}

impl<'a> Sample<'a> {
    pub fn new(input: &'a [f64], target: &'a [f64]) -> Self {
        Self {
            input,
            shift: &[],
            target,
        }
    }

    pub fn shifted(input: &'a [f64], shift: &'a [f64], target: &'a [f64]) -> Self {
        Self {
            input,
            shift,
            target,
        }
    }
}

/// Reusable buffers holding pre- and post-activations of every layer.
#[derive(Debug, Clone)]
pub struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        Self {
            pre: dims.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            post: dims.iter().map(|&(_, o)| vec![0.0; o]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }

    /// Pre-activations of layer `idx`.
    pub fn preactivation(&self, idx: usize) -> &[f64] {
        &self.pre[idx]
    }
}

fn check_input(spec: &NetworkSpec, x: &[f64], shift: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::shape(format!(
            "input has {} entries, network expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    if shift.len() > spec.first_width() {
        return Err(Error::shape(format!(
            "shift has {} entries, first layer has {} units",
            shift.len(),
            spec.first_width()
        )));
    }
    Ok(())
}

/// Forward pass into `trace`. Shapes are assumed checked by the caller.
pub fn forward_into(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &[f64],
    shift: &[f64],
    trace: &mut Trace,
) {
    let last = params.layers.len() - 1;
    for (idx, layer) in params.layers.iter().enumerate() {
        let (before, after) = trace.post.split_at_mut(idx);
        let input: &[f64] = if idx == 0 { x } else { &before[idx - 1] };
        let pre = &mut trace.pre[idx];
        pre.copy_from_slice(&layer.biases);
        if idx == 0 {
            for (p, s) in pre.iter_mut().zip(shift) {
                *p += s;
            }
        }
        for (i, &xi) in input.iter().enumerate() {
            let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
        let post = &mut after[0];
        if idx == last {
            for (a, &z) in post.iter_mut().zip(pre.iter()) {
                *a = spec.output_activation.apply(z);
            }
        } else {
            for (a, &z) in post.iter_mut().zip(pre.iter()) {
                *a = spec.hidden_activation.apply(z);
            }
        }
    }
}

/// `f_θ(x) = g_θ'(<x, θ_W> + θ_b)`.
pub fn forward(spec: &NetworkSpec, params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    forward_shifted(spec, params, x, &[])
}

/// Forward pass with `shift` added to the leading first-layer pre-activations.
pub fn forward_shifted(
    spec: &NetworkSpec,
    params: &NetworkParams,
    x: &[f64],
    shift: &[f64],
) -> Result<Vec<f64>> {
    check_input(spec, x, shift)?;
    params.check_shape(spec)?;
    let mut trace = Trace::new(spec);
    forward_into(spec, params, x, shift, &mut trace);
    Ok(trace.output().to_vec())
}

/// Scratch space for [`gradient_with`], so training loops do not allocate.
#[derive(Debug, Clone)]
pub struct GradScratch {
    trace: Trace,
    delta: Vec<Vec<f64>>,
    out_grad: Vec<f64>,
}

impl GradScratch {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            trace: Trace::new(spec),
            delta: spec
                .layer_dims()
                .iter()
                .map(|&(_, o)| vec![0.0; o])
                .collect(),
            out_grad: vec![0.0; spec.output_dim],
        }
    }
}

/// Mean objective over `batch` and its exact gradient.
pub fn gradient(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &[Sample<'_>],
    objective: Objective,
) -> Result<(f64, Gradient)> {
    let mut grad = NetworkParams::zeros(spec);
    let mut scratch = GradScratch::new(spec);
    let loss = gradient_with(spec, params, batch, objective, &mut grad, &mut scratch)?;
    Ok((loss, grad))
}

/// Like [`gradient`] but writes into `grad` (overwritten) using `scratch`.
pub fn gradient_with(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &[Sample<'_>],
    objective: Objective,
    grad: &mut Gradient,
    scratch: &mut GradScratch,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::shape("gradient of an empty batch"));
    }
    params.check_shape(spec)?;
    grad.check_shape(spec)?;
    for v in grad.iter_flat_mut() {
        *v = 0.0;
    }

    let last = params.layers.len() - 1;
    let mut total = 0.0;
    for sample in batch {
        check_input(spec, sample.input, sample.shift)?;
        if sample.target.len() != spec.output_dim {
            return Err(Error::shape(format!(
                "target has {} entries, network outputs {}",
                sample.target.len(),
                spec.output_dim
            )));
        }
        forward_into(spec, params, sample.input, sample.shift, &mut scratch.trace);
        for (idx, post) in scratch.trace.post.iter().enumerate() {
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: idx });
            }
        }

        let trace = &scratch.trace;
        let loss = objective.value_and_grad(trace.output(), sample.target, &mut scratch.out_grad);
        if !loss.is_finite() {
            return Err(Error::NonFinite { layer: last });
        }
        total += loss;

        // Output delta.
        for ((d, &g), &a) in scratch.delta[last]
            .iter_mut()
            .zip(&scratch.out_grad)
            .zip(&trace.post[last])
        {
            *d = g * spec.output_activation.derivative(a);
        }

        for idx in (0..=last).rev() {
            let layer = &params.layers[idx];
            let input: &[f64] = if idx == 0 {
                sample.input
            } else {
                &trace.post[idx - 1]
            };
            let (lower, upper) = scratch.delta.split_at_mut(idx);
            let delta = &upper[0];
            let g = &mut grad.layers[idx];
            for (gb, &d) in g.biases.iter_mut().zip(delta) {
                *gb += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (gw, &d) in row.iter_mut().zip(delta) {
                    *gw += xi * d;
                }
            }
            if idx > 0 {
                let prev = &mut lower[idx - 1];
                let pre = &trace.pre[idx - 1];
                let post = &trace.post[idx - 1];
                for i in 0..layer.fan_in {
                    let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    let s: f64 = row.iter().zip(delta).map(|(w, d)| w * d).sum();
                    prev[i] = s * spec.hidden_activation.derivative(pre[i], post[i]);
                }
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for (idx, layer) in grad.layers.iter_mut().enumerate() {
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *v *= scale;
            if !v.is_finite() {
                return Err(Error::NonFinite { layer: idx });
            }
        }
    }
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(d: usize, widths: Vec<usize>, l: usize, act: HiddenActivation) -> NetworkSpec {
        NetworkSpec::new(d, widths, l, act, OutputActivation::Identity).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let spec = tiny(2, vec![4], 1, HiddenActivation::Tanh);
        assert_eq!(init_params(&spec, 0), init_params(&spec, 0));
        assert_ne!(init_params(&spec, 0), init_params(&spec, 1));
    }

    #[test]
    fn init_biases_are_zero_and_shapes_match() {
        let spec = tiny(3, vec![8, 5], 2, HiddenActivation::Relu);
        let p = init_params(&spec, 3);
        assert_eq!(p.first_weights().len(), 3 * 8);
        assert_eq!(p.layers()[0].fan_in, 3);
        assert_eq!(p.layers()[0].fan_out, 8);
        for l in p.layers() {
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
        assert_eq!(p.len(), spec.param_count());
    }

    #[test]
    fn zero_first_weights_make_output_input_independent() {
        let spec = tiny(3, vec![6, 4], 2, HiddenActivation::Tanh);
        let mut p = init_params(&spec, 11);
        p.first_weights_mut().iter_mut().for_each(|w| *w = 0.0);
        p.first_biases_mut()[0] = 0.3;
        let a = forward(&spec, &p, &[1.0, -2.0, 0.5]).unwrap();
        let b = forward(&spec, &p, &[-7.0, 3.0, 100.0]).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn identity_network_returns_input() {
        // 2 -> 2 (identity hidden via relu on positive inputs) -> 2, identity weights.
        let spec = tiny(2, vec![2], 2, HiddenActivation::Relu);
        let mut p = NetworkParams::zeros(&spec);
        for layer in p.layers_mut() {
            layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        }
        let y = forward(&spec, &p, &[0.25, 3.5]).unwrap();
        assert_eq!(y, vec![0.25, 3.5]);
    }

    #[test]
    fn forward_rejects_bad_input_shape() {
        let spec = tiny(2, vec![3], 1, HiddenActivation::Tanh);
        let p = init_params(&spec, 0);
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_at_stationary_point_is_zero_on_rest() {
        let spec = tiny(2, vec![4], 1, HiddenActivation::Tanh);
        let mut p = init_params(&spec, 5);
        p.first_weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let out = forward(&spec, &p, &[0.0, 0.0]).unwrap();
        let xs = [[0.3, 0.1], [-1.0, 2.0]];
        let batch: Vec<_> = xs.iter().map(|x| Sample::new(x, &out)).collect();
        let (loss, g) = gradient(&spec, &p, &batch, Objective::Squared).unwrap();
        assert_eq!(loss, 0.0);
        for layer in g.rest() {
            assert!(layer.weights.iter().chain(&layer.biases).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_batch_entry_keeps_mean_gradient() {
        let spec = tiny(2, vec![5], 1, HiddenActivation::Tanh);
        let p = init_params(&spec, 9);
        let x = [0.4, -0.2];
        let t = [0.7];
        let (l1, g1) = gradient(&spec, &p, &[Sample::new(&x, &t)], Objective::Squared).unwrap();
        let (l2, g2) = gradient(
            &spec,
            &p,
            &[Sample::new(&x, &t), Sample::new(&x, &t)],
            Objective::Squared,
        )
        .unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let spec = tiny(1, vec![2], 1, HiddenActivation::Tanh);
        let p = init_params(&spec, 0);
        assert!(gradient(&spec, &p, &[], Objective::Squared).is_err());
    }

    #[test]
    fn non_finite_reports_layer() {
        let spec = tiny(1, vec![2], 1, HiddenActivation::Relu);
        let mut p = init_params(&spec, 0);
        p.layers_mut()[1].weights[0] = f64::INFINITY;
        p.layers_mut()[0].weights[0] = 1.0;
        let err = gradient(
            &spec,
            &p,
            &[Sample::new(&[1.0], &[0.0])],
            Objective::Squared,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 1 }), "{err}");
    }
}
