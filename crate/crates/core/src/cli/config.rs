use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::construction::{TrainConfig, DEFAULT_SLICE_GAIN};
use crate::losses::{LossFamily, DEFAULT_MARGIN};
use crate::nn::{Algorithm, HiddenActivation, NetworkSpec, OutputActivation};
use crate::{Error, Result};

/// Declarative run configuration. Every key is optional in the TOML file and
/// can be overridden from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub pattern: String,
    pub widths: Vec<usize>,
    /// `tanh` or `relu`.
    pub activation: String,
    /// `squared` or `bce`.
    pub loss: String,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub seed: u64,
    /// Lattice nodes per axis for surface evaluation.
    pub resolution: usize,
    /// Quality bar: aligned MSE for `paint`/`paint-min`, grid difference for
    /// `transfer`. Unset means no bar for painting and `1e-9` for transfer.
    pub threshold: Option<f64>,
    pub outdir: PathBuf,
    pub margin: f64,
    pub lattice_sampling: bool,
    pub train_shatter: bool,
    /// Scale of the second-layer weights that read the slice units.
    pub slice_gain: f64,
    /// Skip training and evaluate the randomly initialized construction.
    pub untrained: bool,
    pub dataset_a: Option<String>,
    pub dataset_b: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synth:classes=10,per_class=50,d=16,seed=0".into(),
            pattern: "ramp:2".into(),
            widths: vec![64, 64],
            activation: "tanh".into(),
            loss: "squared".into(),
            epochs: 200,
            samples_per_epoch: 2048,
            batch: 16,
            lr: 5e-2,
            final_lr_fraction: 2e-3,
            optimizer: "adam".into(),
            seed: 0,
            resolution: 32,
            threshold: None,
            outdir: PathBuf::from("out"),
            margin: DEFAULT_MARGIN,
            lattice_sampling: false,
            train_shatter: false,
            slice_gain: DEFAULT_SLICE_GAIN,
            untrained: false,
            dataset_a: None,
            dataset_b: None,
            checkpoint: None,
            metadata: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_resolved(&self) -> Result<()> {
        fs::create_dir_all(&self.outdir)?;
        fs::write(self.outdir.join("config.resolved.toml"), self.to_toml())?;
        Ok(())
    }

    pub fn loss_family(&self) -> Result<LossFamily> {
        self.loss.parse()
    }

    pub fn hidden_activation(&self) -> Result<HiddenActivation> {
        self.activation.parse()
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        match self.optimizer.as_str() {
            "adam" => Ok(Algorithm::adam()),
            "sgd" => Ok(Algorithm::Sgd),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn network_spec(&self, input_dim: usize, output_dim: usize) -> Result<NetworkSpec> {
        let output_activation = match self.loss_family()? {
            LossFamily::Squared => OutputActivation::Identity,
            LossFamily::BinaryCrossEntropy => OutputActivation::Sigmoid,
        };
        NetworkSpec::new(
            input_dim,
            self.widths.clone(),
            output_dim,
            self.hidden_activation()?,
            output_activation,
        )
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            samples_per_epoch: self.samples_per_epoch,
            epochs: self.epochs,
            batch_size: self.batch,
            algorithm: self.algorithm()?,
            learning_rate: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            seed: self.seed,
            lattice_sampling: self.lattice_sampling,
            margin: self.margin,
            train_shatter: self.train_shatter,
            slice_gain: self.slice_gain,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn check_resolution(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::config("resolution must be at least 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            threshold: Some(0.02),
            widths: vec![8, 4],
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: RunConfig = toml::from_str("epochs = 3\nloss = \"bce\"\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.loss_family().unwrap(), LossFamily::BinaryCrossEntropy);
        assert_eq!(cfg.batch, 16);
        let spec = cfg.network_spec(2, 1).unwrap();
        assert_eq!(spec.output_activation, OutputActivation::Sigmoid);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("epoch = 3").is_err());
    }
}
