//! Parameter constructions that place a pattern into the loss surface.
//!
//! Both constructions use the same slice: `θ₀` has zero first-layer biases on
//! the slice coordinates, and direction `i` is the unit vector on first-layer
//! bias `i`. Moving along the slice therefore writes `h = α` into the first
//! `z` biases.

mod embedded;
mod independent;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::losses::{Heads, LossFamily, DEFAULT_MARGIN};
use crate::nn::{self, Algorithm, NetworkParams, NetworkSpec};
use crate::patterns::SamplingMode;
use crate::{Error, Result};

pub use embedded::{
    build_embedded_layout, build_embedded_targets, check_shatter_injectivity, shatter_embedding,
    train_embedded, EmbeddedTarget, EmbeddedTrainer, INJECTIVITY_THRESHOLD,
};
pub use independent::{build_independent_layout, q_eval, train_independent, IndependentTrainer};

pub const DEFAULT_SLICE_GAIN: f64 = 10.0;

/// Redraws the weights that read the slice units (rows `0..z` of the second
/// layer) from `N(0, gain²)` and sets each bias so the unit's hyperplane
/// passes through the image of a uniformly drawn slice point, spreading the
/// kinks over `[0,1]^z`. Needs at least two hidden layers. With the
/// default fan-in scaling only `z` of the `k` inputs carry signal, which
/// leaves the network almost linear in `h`.
pub(crate) fn spread_slice_rows(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    z: usize,
    gain: f64,
    seed: u64,
) {
    // With a single hidden layer the slice units feed the output directly and
    // the plain initialization already works.
    if gain <= 0.0 || params.layers().len() < 3 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ce);
    let layer = &mut params.layers_mut()[1];
    let w = Normal::new(0.0, gain).expect("finite gain");
    let n = layer.fan_out;
    for row in layer.weights.chunks_mut(n).take(z) {
        row.iter_mut().for_each(|v| *v = w.sample(&mut rng));
    }
    for j in 0..n {
        layer.biases[j] = -(0..z)
            .map(|i| layer.weights[i * n + j] * spec.hidden_activation.apply(rng.gen::<f64>()))
            .sum::<f64>();
    }
}

/// Base point and axis-aligned directions spanning the loss-surface section.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    pub z: usize,
    pub theta0: NetworkParams,
    pub directions: Vec<NetworkParams>,
}

impl SliceSpec {
    /// Directions are unit vectors on first-layer biases `0..z`.
    pub fn axis_aligned(spec: &NetworkSpec, theta0: NetworkParams, z: usize) -> Result<Self> {
        theta0.check_shape(spec)?;
        if z == 0 || z > spec.first_width() {
            return Err(Error::config(format!(
                "slice dimension {z} needs 1 <= z <= k = {}",
                spec.first_width()
            )));
        }
        let directions = (0..z)
            .map(|i| {
                let mut d = NetworkParams::zeros(spec);
                d.first_biases_mut()[i] = 1.0;
                d
            })
            .collect();
        let slice = Self {
            z,
            theta0,
            directions,
        };
        slice.validate(false)?;
        Ok(slice)
    }

    /// `θ₀ + Σᵢ αᵢ θᵢ`, computed over every coordinate.
    pub fn point(&self, alpha: &[f64]) -> Result<NetworkParams> {
        if alpha.len() != self.z {
            return Err(Error::shape(format!(
                "alpha has {} entries, slice is {}-dimensional",
                alpha.len(),
                self.z
            )));
        }
        let mut flat = self.theta0.to_flat();
        for (dir, &a) in self.directions.iter().zip(alpha) {
            for (p, d) in flat.iter_mut().zip(dir.iter_flat()) {
                *p += a * d;
            }
        }
        let mut out = self.theta0.clone();
        out.set_flat(&flat)?;
        Ok(out)
    }

    /// Checks the slice layout. With `input_independent`, all of `θ_W` must
    /// be zero; otherwise only its first `z` columns.
    pub fn validate(&self, input_independent: bool) -> Result<()> {
        let layer = &self.theta0.layers()[0];
        let k = layer.fan_out;
        for i in 0..layer.fan_in {
            for j in 0..k {
                let frozen_col = input_independent || j < self.z;
                if frozen_col && layer.weight(i, j) != 0.0 {
                    return Err(Error::config(format!(
                        "slice layout violated: theta_W[{i},{j}] = {}",
                        layer.weight(i, j)
                    )));
                }
            }
        }
        if let Some(j) = (0..self.z).find(|&j| layer.biases[j] != 0.0) {
            return Err(Error::config(format!(
                "slice layout violated: theta_b[{j}] = {}",
                layer.biases[j]
            )));
        }
        if self.directions.len() != self.z {
            return Err(Error::config("slice needs exactly z directions"));
        }
        for (i, dir) in self.directions.iter().enumerate() {
            let ok = dir.layers().iter().enumerate().all(|(l, layer)| {
                layer.weights.iter().all(|&w| w == 0.0)
                    && layer.biases.iter().enumerate().all(|(j, &b)| {
                        if l == 0 && j == i {
                            b == 1.0
                        } else {
                            b == 0.0
                        }
                    })
            });
            if !ok {
                return Err(Error::config(format!(
                    "direction {i} is not the unit vector on first-layer bias {i}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// h-samples drawn per epoch.
    pub samples_per_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Learning rate at the last epoch, as a fraction of `learning_rate`;
    /// the rate decays geometrically in between. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Draw fresh uniform h every epoch, or reuse a fixed lattice.
    pub lattice_sampling: bool,
    /// Distance kept between the shifted pattern and the minimum of the loss.
    pub margin: f64,
    /// Train the random embedding columns of `θ_W` as well (second construction only).
    pub train_shatter: bool,
    /// Scale of the second-layer weights reading the slice units; `0` keeps
    /// the plain fan-in initialization.
    pub slice_gain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples_per_epoch: 2048,
            epochs: 100,
            batch_size: 64,
            algorithm: Algorithm::adam(),
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
            lattice_sampling: false,
            margin: DEFAULT_MARGIN,
            train_shatter: false,
            slice_gain: DEFAULT_SLICE_GAIN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_epoch == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "samples_per_epoch, epochs and batch must be positive",
            ));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::config("final_lr_fraction must lie in (0, 1]"));
        }
        if !(self.slice_gain >= 0.0) {
            return Err(Error::config("slice_gain must be non-negative"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::config("margin must be non-negative"));
        }
        Ok(())
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        if self.lattice_sampling {
            SamplingMode::Lattice
        } else {
            SamplingMode::UniformRandom { seed: self.seed }
        }
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    /// Input-independent pattern (zero first-layer weights).
    InputIndependent,
    /// Pattern with an embedded approximate global minimum.
    EmbeddedMinimum,
}

#[derive(Debug, Clone)]
pub struct ConstructionResult {
    pub kind: ConstructionKind,
    pub slice: SliceSpec,
    /// Trained parameters; equal to `slice.theta0`.
    pub params: NetworkParams,
    /// Mean regression objective of the last epoch.
    pub objective: f64,
    /// Offset `c` per pattern channel.
    pub offsets: Vec<f64>,
    pub heads: Heads,
    pub family: LossFamily,
    pub seed: u64,
    /// Mean regression objective per epoch.
    pub history: Vec<f64>,
}

/// Sidecar metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionMetadata {
    pub kind: ConstructionKind,
    pub z: usize,
    pub offsets: Vec<f64>,
    pub loss: LossFamily,
    pub pattern_channels: usize,
    pub seed: u64,
    pub final_objective: f64,
    pub epochs: usize,
}

impl ConstructionResult {
    pub fn metadata(&self) -> ConstructionMetadata {
        ConstructionMetadata {
            kind: self.kind,
            z: self.slice.z,
            offsets: self.offsets.clone(),
            loss: self.family,
            pattern_channels: self.heads.count,
            seed: self.seed,
            final_objective: self.objective,
            epochs: self.history.len(),
        }
    }

    /// Writes the `LPNET1` checkpoint and its JSON sidecar.
    pub fn save(&self, spec: &NetworkSpec, checkpoint: &Path, metadata: &Path) -> Result<()> {
        let mut buf = Vec::new();
        nn::write_checkpoint(&mut buf, spec, &self.params)?;
        fs::write(checkpoint, buf)?;
        let json = serde_json::to_string_pretty(&self.metadata())
            .map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(metadata, json)?;
        Ok(())
    }
}

/// Reloads a saved construction as `(spec, slice, metadata)`.
pub fn load_construction(
    checkpoint: &Path,
    metadata: &Path,
) -> Result<(NetworkSpec, SliceSpec, ConstructionMetadata)> {
    let (spec, params) = nn::read_checkpoint(fs::File::open(checkpoint)?)?;
    let meta: ConstructionMetadata = serde_json::from_str(&fs::read_to_string(metadata)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", metadata.display())))?;
    let slice = SliceSpec::axis_aligned(&spec, params, meta.z)?;
    slice.validate(meta.kind == ConstructionKind::InputIndependent)?;
    Ok((spec, slice, meta))
}
