//! Command-line driver: `paint`, `paint-min`, `transfer`, `verify`, `render`.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 quality
//! threshold failed, 3 injectivity precondition failed.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

use crate::construction::{
    load_construction, ConstructionKind, ConstructionResult, EmbeddedTrainer, IndependentTrainer,
};
use crate::data::{self, Dataset};
use crate::losses::{per_example_loss, Heads, ImplicitActivation};
use crate::nn::{self, NetworkSpec};
use crate::patterns::{self, Pattern};
use crate::surface::{
    evaluate_slice, local_minima, locate_minimum, reconstruction_error, transfer_compare, Minimum,
    ReconstructionReport, SurfaceGrid, TransferReport,
};
use crate::verify::{self, VerifyOptions};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_THRESHOLD: i32 = 2;
pub const EXIT_INJECTIVITY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "losspaint",
    version,
    about = "Paint patterns into neural network loss surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Input-independent construction: train, evaluate the slice, report.
    Paint(Overrides),
    /// Construction with an embedded minimum of the original task.
    PaintMin(Overrides),
    /// Evaluate a saved slice on two datasets and compare the surfaces.
    Transfer(Overrides),
    /// Run the built-in numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a 2D grid CSV as PGM (1 channel) or PPM (3 channels).
    Render {
        grid: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 255)]
        maxval: u16,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    pattern: Option<String>,
    /// Comma-separated hidden widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    final_lr_fraction: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    slice_gain: Option<f64>,
    #[arg(long)]
    lattice_sampling: bool,
    #[arg(long)]
    train_shatter: bool,
    #[arg(long)]
    untrained: bool,
    #[arg(long)]
    dataset_a: Option<String>,
    #[arg(long)]
    dataset_b: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
}

impl Overrides {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            dataset,
            pattern,
            widths,
            activation,
            loss,
            epochs,
            samples_per_epoch,
            batch,
            lr,
            final_lr_fraction,
            optimizer,
            seed,
            resolution,
            outdir,
            margin,
            slice_gain
        );
        if self.threshold.is_some() {
            cfg.threshold = self.threshold;
        }
        if self.dataset_a.is_some() {
            cfg.dataset_a = self.dataset_a;
        }
        if self.dataset_b.is_some() {
            cfg.dataset_b = self.dataset_b;
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint;
        }
        if self.metadata.is_some() {
            cfg.metadata = self.metadata;
        }
        cfg.lattice_sampling |= self.lattice_sampling;
        cfg.train_shatter |= self.train_shatter;
        cfg.untrained |= self.untrained;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Paint(o) => o.resolve().and_then(|cfg| cmd_paint(&cfg)),
        Command::PaintMin(o) => o.resolve().and_then(|cfg| cmd_paint_min(&cfg)),
        Command::Transfer(o) => o.resolve().and_then(|cfg| cmd_transfer(&cfg)),
        Command::Verify { seed } => Ok(cmd_verify(&VerifyOptions {
            seed,
            ..VerifyOptions::default()
        })),
        Command::Render {
            grid,
            output,
            maxval,
        } => cmd_render(&grid, &output, maxval).map(|()| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(Error::NotInjective { min_distance }) => {
            eprintln!(
                "error: the random first-layer embedding maps two inputs within {min_distance:e} \
                 of each other; try another --seed"
            );
            EXIT_INJECTIVITY
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[derive(Debug, Serialize)]
struct PaintReport<'a> {
    kind: ConstructionKind,
    dataset: &'a str,
    pattern: &'a str,
    loss: &'a str,
    seed: u64,
    epochs: usize,
    final_objective: f64,
    offsets: &'a [f64],
    reconstruction: &'a ReconstructionReport,
    minimum: Option<&'a MinimumReport>,
    threshold: Option<f64>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct MinimumReport {
    surface_minimum: Minimum,
    local_minima: Vec<Vec<f64>>,
    /// Lattice argmin of the pattern, first in lattice order on ties.
    pattern_argmin: Vec<f64>,
    pattern_ties: Vec<Vec<f64>>,
    /// Loss at the pattern argmin, per channel.
    loss_at_h_star: Vec<f64>,
    shifted_pattern_at_h_star: Vec<f64>,
    gap: f64,
}

struct Inputs {
    dataset: Dataset,
    pattern: Pattern,
    spec: NetworkSpec,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    cfg.check_resolution()?;
    let dataset = data::parse_descriptor(&cfg.dataset)?;
    let pattern = patterns::parse_descriptor(&cfg.pattern)?;
    let spec = cfg.network_spec(dataset.input_dim(), dataset.target_dim())?;
    Ok(Inputs {
        dataset,
        pattern,
        spec,
    })
}

fn progress(epoch: usize, total: usize, objective: f64) {
    if epoch == 1 || epoch == total || epoch % 10 == 0 {
        eprintln!("epoch {epoch:>4}/{total}  objective {objective:.6e}");
    }
}

fn write_grid(grid: &SurfaceGrid, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_image(grid: &SurfaceGrid, outdir: &Path) -> Result<Option<PathBuf>> {
    if grid.z != 2 || !(grid.channels == 1 || grid.channels == 3) {
        return Ok(None);
    }
    let path = outdir.join(if grid.channels == 1 {
        "surface.pgm"
    } else {
        "surface.ppm"
    });
    fs::write(&path, grid.to_image(255)?.to_bytes())?;
    Ok(Some(path))
}

fn finish_paint(
    cfg: &RunConfig,
    inputs: &Inputs,
    result: ConstructionResult,
    minimum: bool,
) -> Result<i32> {
    let outdir = &cfg.outdir;
    result.save(
        &inputs.spec,
        &outdir.join("checkpoint.lpnet"),
        &outdir.join("metadata.json"),
    )?;
    let resolution = vec![cfg.resolution; inputs.pattern.z()];
    let grid = evaluate_slice(
        &inputs.spec,
        &result.slice,
        &inputs.dataset,
        result.family,
        &result.heads,
        &resolution,
    )?;
    write_grid(&grid, &outdir.join("grid.csv"))?;
    write_image(&grid, outdir)?;
    let rep = reconstruction_error(&grid, &inputs.pattern, &result.offsets)?;
    let min_report = if minimum {
        Some(minimum_report(&grid, inputs, &result)?)
    } else {
        None
    };
    let passed = cfg.threshold.map_or(true, |t| rep.mse <= t);

    let mut text = format!(
        "construction     {:?}\ndataset          {}\npattern          {}\nloss             {}\n\
         epochs           {}\nfinal objective  {:.6e}\noffsets c        {:?}\n",
        result.kind,
        inputs.dataset.name,
        cfg.pattern,
        result.family,
        result.history.len(),
        result.objective,
        result.offsets
    );
    text.push_str(&rep.to_text());
    if let Some(m) = &min_report {
        text.push_str(&format!(
            "surface minimum  {:?} (value {:.6e}, ties {:?})\nlocal minima     {:?}\n\
             pattern argmin   {:?} (ties {:?})\nL(h*)            {:?}\nT(h*) + c        {:?}\n\
             |L(h*) - T(h*) - c| {:.6e}\n",
            m.surface_minimum.alpha,
            m.surface_minimum.value,
            m.surface_minimum.ties,
            m.local_minima,
            m.pattern_argmin,
            m.pattern_ties,
            m.loss_at_h_star,
            m.shifted_pattern_at_h_star,
            m.gap
        ));
    }
    if let Some(t) = cfg.threshold {
        text.push_str(&format!(
            "threshold        {t:e} -> {}\n",
            if passed { "pass" } else { "FAIL" }
        ));
    }
    fs::write(outdir.join("report.txt"), &text)?;
    let json = PaintReport {
        kind: result.kind,
        dataset: &inputs.dataset.name,
        pattern: &cfg.pattern,
        loss: result.family.name(),
        seed: result.seed,
        epochs: result.history.len(),
        final_objective: result.objective,
        offsets: &result.offsets,
        reconstruction: &rep,
        minimum: min_report.as_ref(),
        threshold: cfg.threshold,
        passed,
    };
    fs::write(
        outdir.join("report.json"),
        serde_json::to_string_pretty(&json).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    print!("{text}");
    Ok(if passed { EXIT_OK } else { EXIT_THRESHOLD })
}

fn minimum_report(
    grid: &SurfaceGrid,
    inputs: &Inputs,
    result: &ConstructionResult,
) -> Result<MinimumReport> {
    let t = inputs.pattern.eval_lattice(&grid.resolution);
    let ch = grid.channels;
    let totals: Vec<f64> = (0..grid.node_count())
        .map(|n| t[n * ch..(n + 1) * ch].iter().sum())
        .collect();
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = (0..totals.len()).filter(|&n| totals[n] == best).collect();
    let h_star = grid.alpha(ties[0]);

    let params = result.slice.point(&h_star)?;
    let ds = &inputs.dataset;
    let mut loss = vec![0.0; result.heads.count];
    for i in 0..ds.len() {
        let p = nn::forward(&inputs.spec, &params, ds.input(i))?;
        for (l, range) in loss.iter_mut().zip(result.heads.ranges()) {
            *l += per_example_loss(result.family, &p[range.clone()], &ds.target(i)[range])?;
        }
    }
    loss.iter_mut().for_each(|l| *l /= ds.len() as f64);
    let shifted: Vec<f64> = inputs
        .pattern
        .eval(&h_star)
        .iter()
        .zip(&result.offsets)
        .map(|(t, c)| t + c)
        .collect();
    let gap = loss
        .iter()
        .zip(&shifted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(MinimumReport {
        surface_minimum: locate_minimum(grid),
        local_minima: local_minima(grid).into_iter().map(|m| m.alpha).collect(),
        pattern_argmin: h_star,
        pattern_ties: ties.iter().map(|&n| grid.alpha(n)).collect(),
        loss_at_h_star: loss,
        shifted_pattern_at_h_star: shifted,
        gap,
    })
}

pub fn cmd_paint(cfg: &RunConfig) -> Result<i32> {
    let inputs = load_inputs(cfg)?;
    let train = cfg.train_config()?;
    let act = ImplicitActivation::new(cfg.loss_family()?, inputs.dataset.moments())?;
    cfg.write_resolved()?;
    let mut trainer = IndependentTrainer::new(&inputs.spec, &inputs.pattern, &act, &train)?;
    if !cfg.untrained {
        for e in 0..train.epochs {
            progress(e + 1, train.epochs, trainer.run_epoch()?);
        }
    }
    let result = trainer.finish()?;
    finish_paint(cfg, &inputs, result, false)
}

pub fn cmd_paint_min(cfg: &RunConfig) -> Result<i32> {
    let inputs = load_inputs(cfg)?;
    let train = cfg.train_config()?;
    cfg.write_resolved()?;
    let mut trainer = EmbeddedTrainer::new(
        &inputs.spec,
        &inputs.pattern,
        cfg.loss_family()?,
        &inputs.dataset,
        &train,
    )?;
    eprintln!(
        "embedding min pairwise distance {:.6e}",
        trainer.min_embedding_distance()
    );
    if !cfg.untrained {
        for e in 0..train.epochs {
            progress(e + 1, train.epochs, trainer.run_epoch()?);
        }
    }
    let result = trainer.finish()?;
    finish_paint(cfg, &inputs, result, true)
}

pub fn cmd_transfer(cfg: &RunConfig) -> Result<i32> {
    cfg.check_resolution()?;
    let checkpoint = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::config("transfer needs a checkpoint"))?;
    let metadata = cfg.metadata.clone().unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("metadata.json")
    });
    let (spec, slice, meta) = load_construction(&checkpoint, &metadata)?;
    let family = cfg.loss_family()?;
    if family != meta.loss {
        return Err(Error::config(format!(
            "checkpoint was built for {} loss, run asks for {}",
            meta.loss, family
        )));
    }
    let a = data::parse_descriptor(
        cfg.dataset_a
            .as_deref()
            .ok_or_else(|| Error::config("transfer needs dataset_a"))?,
    )?;
    let b = data::parse_descriptor(
        cfg.dataset_b
            .as_deref()
            .ok_or_else(|| Error::config("transfer needs dataset_b"))?,
    )?;
    let heads = Heads::new(meta.pattern_channels, spec.output_dim)?;
    cfg.write_resolved()?;
    let resolution = vec![cfg.resolution; meta.z];
    let (grid_a, grid_b, report) =
        transfer_compare(&spec, &slice, &a, &b, family, &heads, &resolution)?;
    write_grid(&grid_a, &cfg.outdir.join("grid_a.csv"))?;
    write_grid(&grid_b, &cfg.outdir.join("grid_b.csv"))?;
    let threshold = cfg.threshold.unwrap_or(1e-9);
    let passed = report.max_abs_difference <= threshold;
    let text = transfer_text(&a, &b, &report, threshold, passed);
    fs::write(cfg.outdir.join("transfer.txt"), &text)?;
    #[derive(Serialize)]
    struct Json<'a> {
        dataset_a: &'a str,
        dataset_b: &'a str,
        threshold: f64,
        passed: bool,
        #[serde(flatten)]
        report: &'a TransferReport,
    }
    fs::write(
        cfg.outdir.join("transfer.json"),
        serde_json::to_string_pretty(&Json {
            dataset_a: &a.name,
            dataset_b: &b.name,
            threshold,
            passed,
            report: &report,
        })
        .map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    print!("{text}");
    Ok(if passed { EXIT_OK } else { EXIT_THRESHOLD })
}

fn transfer_text(
    a: &Dataset,
    b: &Dataset,
    report: &TransferReport,
    threshold: f64,
    passed: bool,
) -> String {
    format!(
        "dataset a        {}\n  mean y         {:?}\n  mean y^2       {:?}\n\
         dataset b        {}\n  mean y         {:?}\n  mean y^2       {:?}\n\
         moment diff      {:.6e}\nmax-abs diff     {:.6e}\nthreshold        {:e} -> {}\n",
        a.name,
        report.moments_a.mean,
        report.moments_a.mean_sq,
        b.name,
        report.moments_b.mean,
        report.moments_b.mean_sq,
        report.moment_difference,
        report.max_abs_difference,
        threshold,
        if passed { "pass" } else { "FAIL" }
    )
}

pub fn cmd_verify(opts: &VerifyOptions) -> i32 {
    let results = verify::run_all(opts);
    print!("{}", verify::format_table(&results));
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_THRESHOLD
    }
}

pub fn cmd_render(grid: &Path, output: &Path, maxval: u16) -> Result<()> {
    let grid = SurfaceGrid::read_csv(fs::File::open(grid)?, grid.display().to_string())?;
    fs::write(output, grid.to_image(maxval)?.to_bytes())?;
    Ok(())
}
