//! Embedded-minimum construction: the first `z` columns of `θ_W` are zero,
//! the remaining columns keep a random injective embedding `φ(x)`, and the
//! network regresses per-example inverted losses `ℓᵢ⁻¹(T(h) + c)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::independent::check_family_output;
use super::{ConstructionKind, ConstructionResult, SliceSpec, TrainConfig};
use crate::data::Dataset;
use crate::losses::{per_example_inverse_split, per_example_offset, Heads, LossFamily};
use crate::nn::{
    self, FreezeMask, GradScratch, NetworkParams, NetworkSpec, Objective, OptimizerState, Sample,
};
use crate::patterns::{sample_h, sample_uniform, Pattern, SamplingMode};
use crate::{Error, Result};

/// Seeds whose embedding has a smaller minimum pairwise distance are rejected.
pub const INJECTIVITY_THRESHOLD: f64 = 1e-6;

/// Above this many (h, example) pairs per epoch, each h is paired with a
/// random minibatch of examples instead of the whole dataset.
const FULL_PRODUCT_LIMIT: usize = 1_000_000;

/// Random `θ_W` with columns `0..z` zeroed, zero `θ_b`, random `θ'`. The mask
/// freezes the zero columns and `θ_b`.
pub fn build_embedded_layout(
    spec: &NetworkSpec,
    z: usize,
    seed: u64,
) -> Result<(NetworkParams, FreezeMask)> {
    let k = spec.first_width();
    if z == 0 || k <= z {
        return Err(Error::config(format!(
            "first hidden layer has k = {k} units, need k > z = {z}"
        )));
    }
    let mut params = nn::init_params(spec, seed);
    let d = spec.input_dim;
    for i in 0..d {
        for j in 0..z {
            params.first_weights_mut()[i * k + j] = 0.0;
        }
    }
    params.first_biases_mut().iter_mut().for_each(|b| *b = 0.0);
    Ok((params, FreezeMask::first_columns(spec, z)))
}

/// `φ(x)`: the input projected through columns `z..k` of `θ_W`.
pub fn shatter_embedding(first_weights: &[f64], d: usize, z: usize, x: &[f64]) -> Vec<f64> {
    let k = first_weights.len() / d;
    (z..k)
        .map(|j| (0..d).map(|i| x[i] * first_weights[i * k + j]).sum())
        .collect()
}

/// Minimum pairwise Euclidean distance between embeddings; `+∞` for fewer
/// than two points.
pub fn check_shatter_injectivity(first_weights: &[f64], z: usize, dataset: &Dataset) -> f64 {
    let d = dataset.input_dim();
    let emb: Vec<Vec<f64>> = dataset
        .inputs()
        .map(|x| shatter_embedding(first_weights, d, z, x))
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let dist = emb[i]
                .iter()
                .zip(&emb[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(dist);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTarget {
    pub h: Vec<f64>,
    /// Dataset row.
    pub index: usize,
    pub target: Vec<f64>,
}

fn target_for(
    t: &[f64],
    offsets: &[f64],
    family: LossFamily,
    heads: &Heads,
    y: &[f64],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(heads.output_dim());
    for (j, range) in heads.ranges().enumerate() {
        out.extend(per_example_inverse_split(
            family,
            &y[range],
            t[j] + offsets[j],
        )?);
    }
    Ok(out)
}

/// Cartesian product of `h_samples` and dataset rows with targets
/// `ℓᵢ⁻¹(T(h) + c)` per head.
pub fn build_embedded_targets(
    pattern: &Pattern,
    offsets: &[f64],
    family: LossFamily,
    heads: &Heads,
    dataset: &Dataset,
    h_samples: &[Vec<f64>],
) -> Result<Vec<EmbeddedTarget>> {
    if dataset.target_dim() != heads.output_dim() {
        return Err(Error::config(format!(
            "labels have {} channels, heads cover {}",
            dataset.target_dim(),
            heads.output_dim()
        )));
    }
    let mut out = Vec::with_capacity(h_samples.len() * dataset.len());
    for h in h_samples {
        let t = pattern.eval(h);
        for i in 0..dataset.len() {
            out.push(EmbeddedTarget {
                h: h.clone(),
                index: i,
                target: target_for(&t, offsets, family, heads, dataset.target(i))?,
            });
        }
    }
    Ok(out)
}

/// Epoch-at-a-time driver for [`train_embedded`].
pub struct EmbeddedTrainer {
    spec: NetworkSpec,
    pattern: Pattern,
    dataset: Dataset,
    heads: Heads,
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
    min_distance: f64,
}

impl EmbeddedTrainer {
    pub fn new(
        spec: &NetworkSpec,
        pattern: &Pattern,
        family: LossFamily,
        dataset: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        check_family_output(family, spec)?;
        if dataset.input_dim() != spec.input_dim || dataset.target_dim() != spec.output_dim {
            return Err(Error::config(format!(
                "dataset is {}→{}, network is {}→{}",
                dataset.input_dim(),
                dataset.target_dim(),
                spec.input_dim,
                spec.output_dim
            )));
        }
        let heads = Heads::new(pattern.channels(), spec.output_dim)?;
        let z = pattern.z();
        let (mut params, layout_mask) = build_embedded_layout(spec, z, cfg.seed)?;
        super::spread_slice_rows(spec, &mut params, z, cfg.slice_gain, cfg.seed);
        let min_distance = check_shatter_injectivity(params.first_weights(), z, dataset);
        if !(min_distance >= INJECTIVITY_THRESHOLD) {
            return Err(Error::NotInjective { min_distance });
        }
        let mask = if cfg.train_shatter {
            layout_mask
        } else {
            FreezeMask::first_layer(spec)
        };
        let offsets = (0..heads.count)
            .map(|j| per_example_offset(pattern.range(j).0, cfg.margin))
            .collect();
        let lattice = match cfg.sampling_mode() {
            SamplingMode::Lattice => {
                Some(sample_h(z, cfg.samples_per_epoch, SamplingMode::Lattice)?)
            }
            SamplingMode::UniformRandom { .. } => None,
        };
        Ok(Self {
            spec: spec.clone(),
            pattern: pattern.clone(),
            dataset: dataset.clone(),
            heads,
            offsets,
            opt: OptimizerState::new(cfg.algorithm, cfg.learning_rate, spec)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002),
            cfg: cfg.clone(),
            lattice,
            history: Vec::with_capacity(cfg.epochs),
            grad: NetworkParams::zeros(spec),
            scratch: GradScratch::new(spec),
            family,
            params,
            mask,
            min_distance,
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

    pub fn min_embedding_distance(&self) -> f64 {
        self.min_distance
    }

    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.history.len();
        self.opt.set_learning_rate(self.cfg.lr_at(epoch));
        let hs = match &self.lattice {
            Some(points) => points.clone(),
            None => sample_uniform(&mut self.rng, self.pattern.z(), self.cfg.samples_per_epoch),
        };
        let n = self.dataset.len();
        let mut pairs: Vec<(usize, usize)> = if hs.len() * n <= FULL_PRODUCT_LIMIT {
            (0..hs.len())
                .flat_map(|s| (0..n).map(move |i| (s, i)))
                .collect()
        } else {
            let per_h = self.cfg.batch_size.min(n);
            let mut out = Vec::with_capacity(hs.len() * per_h);
            for s in 0..hs.len() {
                for _ in 0..per_h {
                    out.push((s, self.rng.gen_range(0..n)));
                }
            }
            out
        };
        pairs.shuffle(&mut self.rng);

        let pattern_values: Vec<Vec<f64>> = hs.iter().map(|h| self.pattern.eval(h)).collect();
        let mut targets = Vec::with_capacity(self.cfg.batch_size);
        let mut total = 0.0;
        for chunk in pairs.chunks(self.cfg.batch_size) {
            targets.clear();
            for &(s, i) in chunk {
                targets.push(target_for(
                    &pattern_values[s],
                    &self.offsets,
                    self.family,
                    &self.heads,
                    self.dataset.target(i),
                )?);
            }
            let batch: Vec<Sample> = chunk
                .iter()
                .zip(&targets)
                .map(|(&(s, i), t)| Sample::shifted(self.dataset.input(i), &hs[s], t))
                .collect();
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
        let mean = total / pairs.len() as f64;
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
        slice.validate(false)?;
        Ok(ConstructionResult {
            kind: ConstructionKind::EmbeddedMinimum,
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

/// Trains the network so that, along the slice, each example's loss tracks
/// `T(h) + c`. At the pattern minimum the network then predicts the labels.
pub fn train_embedded(
    spec: &NetworkSpec,
    pattern: &Pattern,
    family: LossFamily,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<ConstructionResult> {
    let mut trainer = EmbeddedTrainer::new(spec, pattern, family, dataset, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    trainer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_regression, Task};
    use crate::losses::per_example_loss;
    use crate::nn::{HiddenActivation, OutputActivation};
    use crate::patterns::Analytic;

    fn spec(d: usize, k: usize) -> NetworkSpec {
        NetworkSpec::new(
            d,
            vec![k, 8],
            1,
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn layout_zeroes_slice_columns_only() {
        let spec = spec(3, 5);
        let (p, mask) = build_embedded_layout(&spec, 2, 4).unwrap();
        for i in 0..3 {
            assert_eq!(p.first_weights()[i * 5], 0.0);
            assert_eq!(p.first_weights()[i * 5 + 1], 0.0);
            assert!(p.first_weights()[i * 5 + 2..i * 5 + 5]
                .iter()
                .all(|&w| w != 0.0));
        }
        // θ' is fully trainable.
        let first = 3 * 5 + 5;
        assert!(mask.as_flat()[first..].iter().all(|&f| !f));
        assert!(build_embedded_layout(&spec, 5, 0).is_err());
    }

    #[test]
    fn slice_preactivations_ignore_input() {
        let spec = spec(2, 4);
        let (p, _) = build_embedded_layout(&spec, 1, 1).unwrap();
        let pre = |x: &[f64]| {
            let mut trace = nn::Trace::new(&spec);
            nn::forward_into(&spec, &p, x, &[0.6], &mut trace);
            trace.preactivation(0)[0]
        };
        assert_eq!(pre(&[1.0, -3.0]), pre(&[7.0, 0.25]));
        assert_eq!(pre(&[1.0, -3.0]), 0.6);
    }

    #[test]
    fn injectivity_distances() {
        let spec = spec(1, 4);
        let (p, _) = build_embedded_layout(&spec, 1, 0).unwrap();
        let dup = Dataset::new(
            "dup",
            Task::Regression,
            1,
            1,
            vec![0.3, 0.3, 0.5],
            vec![0.0; 3],
        )
        .unwrap();
        assert_eq!(check_shatter_injectivity(p.first_weights(), 1, &dup), 0.0);
        let toy = toy_regression(32, 1).unwrap();
        assert!(check_shatter_injectivity(p.first_weights(), 1, &toy) > 0.0);
        let one = Dataset::new("one", Task::Regression, 1, 1, vec![0.3], vec![0.0]).unwrap();
        assert_eq!(
            check_shatter_injectivity(p.first_weights(), 1, &one),
            f64::INFINITY
        );
    }

    #[test]
    fn duplicate_inputs_fail_injectivity() {
        let spec = spec(1, 4);
        let ds = Dataset::new(
            "dup",
            Task::Regression,
            1,
            1,
            vec![0.3, 0.3],
            vec![0.1, 0.2],
        )
        .unwrap();
        let pattern = Pattern::analytic(Analytic::Bimodal, 1).unwrap();
        let err = EmbeddedTrainer::new(
            &spec,
            &pattern,
            LossFamily::Squared,
            &ds,
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::NotInjective { .. })));
    }

    #[test]
    fn targets_reproduce_labels_at_zero_loss() {
        let ds = toy_regression(16, 2).unwrap();
        let pattern = Pattern::analytic(Analytic::Constant(0.2), 1).unwrap();
        let heads = Heads::new(1, 1).unwrap();
        // c = −T makes the shifted pattern exactly zero.
        let targets = build_embedded_targets(
            &pattern,
            &[-0.2],
            LossFamily::Squared,
            &heads,
            &ds,
            &[vec![0.5]],
        )
        .unwrap();
        for t in &targets {
            assert_eq!(t.target[0], ds.target(t.index)[0]);
        }
    }

    #[test]
    fn targets_average_to_pattern() {
        let ds = toy_regression(50, 4).unwrap();
        let pattern = Pattern::analytic(Analytic::Bimodal, 1).unwrap();
        let heads = Heads::new(1, 1).unwrap();
        let c = 0.01;
        let hs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let targets =
            build_embedded_targets(&pattern, &[c], LossFamily::Squared, &heads, &ds, &hs).unwrap();
        for (s, h) in hs.iter().enumerate() {
            let block = &targets[s * ds.len()..(s + 1) * ds.len()];
            let mean = block
                .iter()
                .map(|t| {
                    per_example_loss(LossFamily::Squared, &t.target, ds.target(t.index)).unwrap()
                })
                .sum::<f64>()
                / ds.len() as f64;
            assert!((mean - (pattern.eval(h)[0] + c)).abs() < 1e-10);
        }
    }
}
