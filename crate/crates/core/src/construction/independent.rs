//! Input-independent construction: `θ_W = 0`, slice coordinates in the first
//! `z` biases, and the rest of the network regressing `σ⁻¹(T(h) + c)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConstructionKind, ConstructionResult, SliceSpec, TrainConfig};
use crate::losses::{coverage_offset, Heads, ImplicitActivation, LossFamily};
use crate::nn::{
    self, FreezeMask, GradScratch, NetworkParams, NetworkSpec, Objective, OptimizerState,
    OutputActivation, Sample,
};
use crate::patterns::{sample_h, sample_uniform, Pattern, SamplingMode};
use crate::{Error, Result};

/// Random `θ'`, zero `θ_W` and `θ_b`; the mask freezes the whole first layer.
pub fn build_independent_layout(
    spec: &NetworkSpec,
    z: usize,
    seed: u64,
) -> Result<(NetworkParams, FreezeMask)> {
    if z == 0 || spec.first_width() < z {
        return Err(Error::config(format!(
            "first hidden layer has k = {} units, need k >= z = {z}",
            spec.first_width()
        )));
    }
    let mut params = nn::init_params(spec, seed);
    params.first_weights_mut().iter_mut().for_each(|w| *w = 0.0);
    params.first_biases_mut().iter_mut().for_each(|b| *b = 0.0);
    Ok((params, FreezeMask::first_layer(spec)))
}

/// `q_θ'(h) = g_θ'([h, 0, ..., 0])`: the network output with `h` written into
/// the first `z` biases. Requires `θ_W = 0`.
pub fn q_eval(spec: &NetworkSpec, params: &NetworkParams, h: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = params.first_weights().iter().find(|&&w| w != 0.0) {
        return Err(Error::config(format!(
            "q is only defined for zero first-layer weights (found {w})"
        )));
    }
    let x = vec![0.0; spec.input_dim];
    nn::forward_shifted(spec, params, &x, h)
}

pub(crate) fn check_family_output(family: LossFamily, spec: &NetworkSpec) -> Result<()> {
    if family == LossFamily::BinaryCrossEntropy
        && spec.output_activation != OutputActivation::Sigmoid
    {
        return Err(Error::config(
            "binary cross-entropy needs a sigmoid output activation",
        ));
    }
    Ok(())
}

/// Epoch-at-a-time driver for [`train_independent`].
pub struct IndependentTrainer {
    spec: NetworkSpec,
    pattern: Pattern,
    heads: Heads,
    head_acts: Vec<ImplicitActivation>,
    offsets: Vec<f64>,
    params: NetworkParams,
    mask: FreezeMask,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
    lattice: Option<Vec<Vec<f64>>>,
    history: Vec<f64>,
    grad: NetworkParams,
    scratch: GradScratch,
    family: LossFamily,
}

impl IndependentTrainer {
    pub fn new(
        spec: &NetworkSpec,
        pattern: &Pattern,
        act: &ImplicitActivation,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        check_family_output(act.family, spec)?;
        if act.channels() != spec.output_dim {
            return Err(Error::config(format!(
                "labels have {} channels, network outputs {}",
                act.channels(),
                spec.output_dim
            )));
        }
        let heads = Heads::new(pattern.channels(), spec.output_dim)?;
        let (mut params, mask) = build_independent_layout(spec, pattern.z(), cfg.seed)?;
        super::spread_slice_rows(spec, &mut params, pattern.z(), cfg.slice_gain, cfg.seed);
        let head_acts: Vec<_> = heads.ranges().map(|r| act.restrict(r)).collect();
        let offsets = head_acts
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let (lo, hi) = pattern.range(j);
                coverage_offset(a, lo, hi, cfg.margin)
            })
            .collect();
        let lattice = match cfg.sampling_mode() {
            SamplingMode::Lattice => Some(sample_h(
                pattern.z(),
                cfg.samples_per_epoch,
                SamplingMode::Lattice,
            )?),
            SamplingMode::UniformRandom { .. } => None,
        };
        Ok(Self {
            spec: spec.clone(),
            pattern: pattern.clone(),
            heads,
            head_acts,
            offsets,
            opt: OptimizerState::new(cfg.algorithm, cfg.learning_rate, spec)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001),
            cfg: cfg.clone(),
            lattice,
            history: Vec::with_capacity(cfg.epochs),
            grad: NetworkParams::zeros(spec),
            scratch: GradScratch::new(spec),
            family: act.family,
            params,
            mask,
        })
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Regression target `σ⁻¹(T(h) + c)`, concatenated over heads.
    pub fn target(&self, h: &[f64]) -> Result<Vec<f64>> {
        let t = self.pattern.eval(h);
        let mut out = Vec::with_capacity(self.heads.output_dim());
        for ((act, &v), &c) in self.head_acts.iter().zip(&t).zip(&self.offsets) {
            out.extend(act.sigma_inverse(v + c)?);
        }
        Ok(out)
    }

    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.history.len();
        self.opt.set_learning_rate(self.cfg.lr_at(epoch));
        let hs = match &self.lattice {
            Some(points) => points.clone(),
            None => sample_uniform(&mut self.rng, self.pattern.z(), self.cfg.samples_per_epoch),
        };
        let targets = hs
            .iter()
            .map(|h| self.target(h))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..hs.len()).collect();
        order.shuffle(&mut self.rng);

        let x = vec![0.0; self.spec.input_dim];
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for chunk in order.chunks(self.cfg.batch_size) {
            batch.clear();
            batch.extend(
                chunk
                    .iter()
                    .map(|&i| Sample::shifted(&x, &hs[i], &targets[i])),
            );
            let loss = nn::gradient_with(
                &self.spec,
                &self.params,
                &batch,
                Objective::Squared,
                &mut self.grad,
                &mut self.scratch,
            )?;
            total += loss * chunk.len() as f64;
            self.mask.apply(&mut self.grad)?;
            self.opt.step(&mut self.params, &self.grad)?;
        }
        let mean = total / hs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                layer: self.spec.num_layers() - 1,
            });
        }
        self.history.push(mean);
        Ok(mean)
    }

    pub fn finish(self) -> Result<ConstructionResult> {
        let slice = SliceSpec::axis_aligned(&self.spec, self.params.clone(), self.pattern.z())?;
        slice.validate(true)?;
        Ok(ConstructionResult {
            kind: ConstructionKind::InputIndependent,
            slice,
            params: self.params,
            objective: self.history.last().copied().unwrap_or(f64::NAN),
            offsets: self.offsets,
            heads: self.heads,
            family: self.family,
            seed: self.cfg.seed,
            history: self.history,
        })
    }
}

/// Trains `θ'` so that the loss along the slice matches `T` up to the
/// recorded offsets.
pub fn train_independent(
    spec: &NetworkSpec,
    pattern: &Pattern,
    act: &ImplicitActivation,
    cfg: &TrainConfig,
) -> Result<ConstructionResult> {
    let mut trainer = IndependentTrainer::new(spec, pattern, act, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    trainer.finish()
}
