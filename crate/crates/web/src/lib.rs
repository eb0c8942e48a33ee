//! Browser demo. Three operations are exported to JavaScript:
//!
//! - [`sigma_curve`]: the implicit activation for binary labels,
//! - [`PaintSession`]: paint a drawn grid into an input-independent surface,
//! - [`ToySession`]: the embedded-minimum construction on the 1D toy task.
//!
//! Everything runs on the main thread; the page calls `train` in small
//! chunks from `requestAnimationFrame`.

use losspaint::construction::{EmbeddedTrainer, IndependentTrainer, SliceSpec, TrainConfig};
use losspaint::data::{synth_balanced_classification, toy_regression, Dataset};
use losspaint::losses::{Heads, ImplicitActivation, LabelMoments, LossFamily};
use losspaint::nn::{HiddenActivation, NetworkParams, NetworkSpec, OutputActivation};
use losspaint::patterns::{Analytic, GridData, Pattern};
use losspaint::surface::{evaluate_slice, reconstruction_error, SurfaceGrid};
use wasm_bindgen::prelude::*;

type JsResult<T> = Result<T, String>;

fn err(e: losspaint::Error) -> String {
    e.to_string()
}

/// Flattened `(p, σ(p))` pairs for binary labels with mean `label_mean`.
/// `family` is `squared` or `bce`.
#[wasm_bindgen]
pub fn sigma_curve(family: &str, label_mean: f64, points: usize) -> JsResult<Vec<f64>> {
    let family: LossFamily = family.parse().map_err(err)?;
    if !(0.0..=1.0).contains(&label_mean) {
        return Err(format!("label mean {label_mean} outside [0, 1]"));
    }
    // Binary labels: mean(y²) = mean(y).
    let moments = LabelMoments::new(1, vec![label_mean], vec![label_mean]).map_err(err)?;
    let act = ImplicitActivation::new(family, moments).map_err(err)?;
    let (lo, hi) = match family {
        LossFamily::Squared => (-0.5, 1.5),
        LossFamily::BinaryCrossEntropy => (0.005, 0.995),
    };
    Ok(losspaint::losses::sigma_profile(&act, lo, hi, points)
        .into_iter()
        .flat_map(|(p, s)| [p, s])
        .collect())
}

fn slice_grid(
    spec: &NetworkSpec,
    params: &NetworkParams,
    z: usize,
    dataset: &Dataset,
    resolution: &[usize],
) -> losspaint::Result<SurfaceGrid> {
    let slice = SliceSpec::axis_aligned(spec, params.clone(), z)?;
    let heads = Heads::new(1, spec.output_dim)?;
    evaluate_slice(
        spec,
        &slice,
        dataset,
        LossFamily::Squared,
        &heads,
        resolution,
    )
}

/// Input-independent construction of a square binary drawing.
#[wasm_bindgen]
pub struct PaintSession {
    spec: NetworkSpec,
    dataset: Dataset,
    pattern: Pattern,
    trainer: IndependentTrainer,
}

#[wasm_bindgen]
impl PaintSession {
    /// `cells` holds `side * side` values in `[0, 1]`, row by row, with the
    /// first row at `alpha1 = 0`.
    #[wasm_bindgen(constructor)]
    pub fn new(cells: Vec<f64>, side: usize, seed: u32) -> JsResult<PaintSession> {
        if side < 2 || cells.len() != side * side {
            return Err(format!("need {side}x{side} cells, got {}", cells.len()));
        }
        let pattern = Pattern::grid(GridData::new(vec![side, side], 1, cells).map_err(err)?);
        let seed = u64::from(seed);
        let dataset = synth_balanced_classification(4, 25, 8, seed).map_err(err)?;
        let spec = NetworkSpec::new(
            8,
            vec![32, 32],
            4,
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .map_err(err)?;
        let act = ImplicitActivation::new(LossFamily::Squared, dataset.moments()).map_err(err)?;
        let cfg = TrainConfig {
            samples_per_epoch: 512,
            epochs: 150,
            batch_size: 16,
            learning_rate: 5e-2,
            final_lr_fraction: 1e-2,
            seed,
            ..TrainConfig::default()
        };
        let trainer = IndependentTrainer::new(&spec, &pattern, &act, &cfg).map_err(err)?;
        Ok(PaintSession {
            spec,
            dataset,
            pattern,
            trainer,
        })
    }

    /// Runs `epochs` more epochs and returns the last regression objective.
    pub fn train(&mut self, epochs: usize) -> JsResult<f64> {
        let mut last = f64::NAN;
        for _ in 0..epochs {
            last = self.trainer.run_epoch().map_err(err)?;
        }
        Ok(last)
    }

    pub fn epochs(&self) -> usize {
        self.trainer.history().len()
    }

    /// Loss values on a `resolution x resolution` lattice, `alpha0` fastest.
    pub fn surface(&self, resolution: usize) -> JsResult<Vec<f64>> {
        let grid = self.grid(resolution).map_err(err)?;
        Ok(grid.channel(0))
    }

    /// Offset-aligned MSE between surface and drawing.
    pub fn aligned_mse(&self, resolution: usize) -> JsResult<f64> {
        let grid = self.grid(resolution).map_err(err)?;
        let rep =
            reconstruction_error(&grid, &self.pattern, self.trainer.offsets()).map_err(err)?;
        Ok(rep.mse)
    }
}

impl PaintSession {
    fn grid(&self, resolution: usize) -> losspaint::Result<SurfaceGrid> {
        slice_grid(
            &self.spec,
            self.trainer.params(),
            2,
            &self.dataset,
            &[resolution, resolution],
        )
    }
}

/// Embedded-minimum construction on the toy regression with the bimodal
/// pattern. Small enough to train interactively.
#[wasm_bindgen]
pub struct ToySession {
    spec: NetworkSpec,
    dataset: Dataset,
    pattern: Pattern,
    trainer: EmbeddedTrainer,
}

#[wasm_bindgen]
impl ToySession {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> JsResult<ToySession> {
        let seed = u64::from(seed);
        let dataset = toy_regression(64, seed).map_err(err)?;
        let pattern = Pattern::analytic(Analytic::Bimodal, 1).map_err(err)?;
        let spec = NetworkSpec::new(
            1,
            vec![32, 32, 32],
            1,
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .map_err(err)?;
        let cfg = TrainConfig {
            samples_per_epoch: 64,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-2,
            final_lr_fraction: 0.05,
            seed,
            ..TrainConfig::default()
        };
        let trainer = EmbeddedTrainer::new(&spec, &pattern, LossFamily::Squared, &dataset, &cfg)
            .map_err(err)?;
        Ok(ToySession {
            spec,
            dataset,
            pattern,
            trainer,
        })
    }

    pub fn train(&mut self, epochs: usize) -> JsResult<f64> {
        let mut last = f64::NAN;
        for _ in 0..epochs {
            last = self.trainer.run_epoch().map_err(err)?;
        }
        Ok(last)
    }

    pub fn epochs(&self) -> usize {
        self.trainer.history().len()
    }

    /// Loss along the slice at `resolution` evenly spaced points.
    pub fn curve(&self, resolution: usize) -> JsResult<Vec<f64>> {
        let grid = slice_grid(
            &self.spec,
            self.trainer.params(),
            1,
            &self.dataset,
            &[resolution],
        )
        .map_err(err)?;
        Ok(grid.channel(0))
    }

    /// The target `T(h) + c` at the same points as [`ToySession::curve`].
    pub fn target(&self, resolution: usize) -> Vec<f64> {
        let c = self.trainer.offsets()[0];
        self.pattern
            .eval_lattice(&[resolution.max(2)])
            .into_iter()
            .map(|t| t + c)
            .collect()
    }
}
