//! Datasets: synthetic balanced classification, the 1D toy regression task,
//! MNIST IDX files, CSV files, and label-marginal preserving splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::{label_moments, LabelMoments};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
    MulticlassOnehot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        task: Task,
        input_dim: usize,
        target_dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 {
            return Err(Error::config("dataset dimensions must be >= 1"));
        }
        let n = inputs.len() / input_dim;
        if n == 0 || inputs.len() != n * input_dim || targets.len() != n * target_dim {
            return Err(Error::shape(format!(
                "dataset needs N >= 1 rows of {input_dim} inputs and {target_dim} targets"
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::config("dataset entries must be finite"));
        }
        let ds = Self {
            name: name.into(),
            task,
            input_dim,
            target_dim,
            inputs,
            targets,
        };
        if task == Task::MulticlassOnehot
            && (0..n).any(|i| (ds.target(i).iter().sum::<f64>() - 1.0).abs() > 1e-12)
        {
            return Err(Error::config("one-hot targets must sum to 1"));
        }
        if task == Task::BinaryClassification && ds.targets.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::config("binary targets must be 0 or 1"));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn targets(&self) -> impl Iterator<Item = &[f64]> {
        self.targets.chunks(self.target_dim)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks(self.input_dim)
    }

    pub fn moments(&self) -> LabelMoments {
        label_moments(self.targets()).expect("dataset is non-empty")
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut targets = Vec::with_capacity(indices.len() * self.target_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Self::new(
            name,
            self.task,
            self.input_dim,
            self.target_dim,
            inputs,
            targets,
        )
    }

    /// Class index for classification tasks.
    pub fn class_of(&self, i: usize) -> Option<usize> {
        let y = self.target(i);
        match self.task {
            Task::Regression => None,
            Task::BinaryClassification => Some(y[0] as usize),
            Task::MulticlassOnehot => y.iter().position(|&v| v == 1.0),
        }
    }

    /// Writes `x0..,y0..` columns with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.input_dim)
            .map(|j| format!("x{j}"))
            .chain((0..self.target_dim).map(|j| format!("y{j}")))
            .collect();
        out.write_record(&header)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .input(i)
                .iter()
                .chain(self.target(i))
                .map(|v| format!("{v:?}"))
                .collect();
            out.write_record(&row)
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gaussian blobs with exactly `per_class` samples per class and one-hot
/// targets. The first `2d` class centres sit at `±4` on the coordinate axes;
/// further centres are random.
pub fn synth_balanced_classification(
    classes: usize,
    per_class: usize,
    d: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || d == 0 {
        return Err(Error::config(
            "synthetic classification needs classes >= 2, per_class >= 1, d >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0; d];
            if c < 2 * d {
                center[c % d] = if c < d { 4.0 } else { -4.0 };
            } else {
                for v in &mut center {
                    *v = 4.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            center
        })
        .collect();
    let mut order: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    order.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(order.len() * d);
    let mut targets = Vec::with_capacity(order.len() * classes);
    for &c in &order {
        for &m in &centers[c] {
            inputs.push(m + rng.sample::<f64, _>(StandardNormal));
        }
        targets.extend((0..classes).map(|k| if k == c { 1.0 } else { 0.0 }));
    }
    Dataset::new(
        format!("synth:classes={classes},per_class={per_class},d={d},seed={seed}"),
        Task::MulticlassOnehot,
        d,
        classes,
        inputs,
        targets,
    )
}

/// `y = −x² + sin(20x)/5 + 1.2`.
pub fn toy_target(x: f64) -> f64 {
    -x * x + (20.0 * x).sin() / 5.0 + 1.2
}

/// Toy 1D regression with inputs uniform on `[−1, 1]`.
pub fn toy_regression(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config("toy regression needs n >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let targets = inputs.iter().map(|&x| toy_target(x)).collect();
    Dataset::new(
        format!("toy:n={n},seed={seed}"),
        Task::Regression,
        1,
        1,
        inputs,
        targets,
    )
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset,
            message: "file truncated in header".into(),
        })
}

/// Loads the first `limit` examples of an (uncompressed) MNIST IDX pair.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip)?;
    let labels = fs::read(lp)?;

    let magic = be_u32(&images, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            offset: 0,
            message: format!("bad image magic {magic:#010x}"),
        });
    }
    let magic = be_u32(&labels, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            offset: 0,
            message: format!("bad label magic {magic:#010x}"),
        });
    }
    let n_images = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    let n_labels = be_u32(&labels, 4, lp)? as usize;
    if n_images != n_labels {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            offset: 4,
            message: format!("{n_labels} labels for {n_images} images"),
        });
    }
    let n = n_images.min(limit);
    let d = rows * cols;
    let pixels_end = 16 + n * d;
    if images.len() < pixels_end {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            offset: images.len(),
            message: format!("pixel data truncated, expected {pixels_end} bytes"),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            offset: labels.len(),
            message: format!("label data truncated, expected {} bytes", 8 + n),
        });
    }
    let inputs = images[16..pixels_end]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let mut targets = vec![0.0; n * 10];
    for (i, &label) in labels[8..8 + n].iter().enumerate() {
        if label > 9 {
            return Err(Error::Format {
                path: lp.to_path_buf(),
                offset: 8 + i,
                message: format!("label {label} outside 0..=9"),
            });
        }
        targets[i * 10 + label as usize] = 1.0;
    }
    Dataset::new(
        format!("mnist:{}", ip.display()),
        Task::MulticlassOnehot,
        d,
        10,
        inputs,
        targets,
    )
}

/// Reads a CSV dataset written by [`Dataset::write_csv`].
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let d = headers.iter().filter(|h| h.starts_with('x')).count();
    let l = headers.iter().filter(|h| h.starts_with('y')).count();
    if d + l != headers.len() || d == 0 || l == 0 {
        return Err(Error::Parse(format!(
            "{}: header must be x0..,y0.. columns",
            path.display()
        )));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("'{field}' is not a number")))?;
            if j < d {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    let binary = targets.iter().all(|&y| y == 0.0 || y == 1.0);
    let task = if binary && l == 1 {
        Task::BinaryClassification
    } else if binary && targets.chunks(l).all(|r| r.iter().sum::<f64>() == 1.0) {
        Task::MulticlassOnehot
    } else {
        Task::Regression
    };
    Dataset::new(
        format!("csv:{}", path.display()),
        task,
        d,
        l,
        inputs,
        targets,
    )
}

/// Stratified split: classes (or 10 target-quantile bins for regression) are
/// divided proportionally so both parts keep the label marginal.
pub fn split_matched_marginals(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let strata: Vec<usize> = match dataset.task {
        Task::Regression => quantile_bins(dataset, 10),
        _ => (0..dataset.len())
            .map(|i| dataset.class_of(i).expect("classification target"))
            .collect(),
    };
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.into_iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (class, mut members) in groups {
        if members.len() < 2 {
            return Err(Error::config(format!(
                "stratum {class} has {} sample(s); need at least 2 to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        a.extend_from_slice(&members[..take]);
        b.extend_from_slice(&members[take..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok((
        dataset.subset(&a, format!("{}[split a]", dataset.name))?,
        dataset.subset(&b, format!("{}[split b]", dataset.name))?,
    ))
}

fn quantile_bins(dataset: &Dataset, bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&i, &j| dataset.target(i)[0].total_cmp(&dataset.target(j)[0]));
    let n = order.len();
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

fn kv_pairs(spec: &str) -> Result<BTreeMap<String, String>> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| Error::config(format!("expected key=value, got '{kv}'")))
        })
        .collect()
}

fn take<T: std::str::FromStr>(
    kv: &mut BTreeMap<String, String>,
    key: &str,
    default: Option<T>,
) -> Result<T> {
    match kv.remove(key) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::config(format!("bad value '{v}' for '{key}'"))),
        None => default.ok_or_else(|| Error::config(format!("missing '{key}'"))),
    }
}

/// Builds a dataset from a descriptor string:
///
/// - `synth:classes=10,per_class=100,d=16,seed=7`
/// - `toy:n=256,seed=0`
/// - `mnist:images=<path>,labels=<path>,limit=1000`
/// - `csv:<path>`
///
/// Any kind accepts `split=<fraction>,part=a|b[,split_seed=<n>]` to select one
/// half of a [`split_matched_marginals`] split.
pub fn parse_descriptor(desc: &str) -> Result<Dataset> {
    let (kind, rest) = desc.split_once(':').unwrap_or((desc, ""));
    let (path, mut kv) = if kind == "csv" {
        let (path, opts) = rest.split_once(',').unwrap_or((rest, ""));
        (Some(PathBuf::from(path)), kv_pairs(opts)?)
    } else {
        (None, kv_pairs(rest)?)
    };
    let split: Option<f64> = kv
        .remove("split")
        .map(|v| {
            v.parse()
                .map_err(|_| Error::config(format!("bad split '{v}'")))
        })
        .transpose()?;
    let part = kv.remove("part");
    let split_seed: u64 = take(&mut kv, "split_seed", Some(0))?;

    let ds = match kind {
        "synth" => {
            let classes = take(&mut kv, "classes", Some(10))?;
            let per_class = take(&mut kv, "per_class", Some(50))?;
            let d = take(&mut kv, "d", Some(16))?;
            let seed = take(&mut kv, "seed", Some(0))?;
            synth_balanced_classification(classes, per_class, d, seed)?
        }
        "toy" => {
            let n = take(&mut kv, "n", Some(256))?;
            let seed = take(&mut kv, "seed", Some(0))?;
            toy_regression(n, seed)?
        }
        "mnist" => {
            let images: String = take(&mut kv, "images", None)?;
            let labels: String = take(&mut kv, "labels", None)?;
            let limit = take(&mut kv, "limit", Some(usize::MAX))?;
            load_mnist_idx(images, labels, limit)?
        }
        "csv" => load_dataset_csv(path.expect("csv path"))?,
        other => return Err(Error::config(format!("unknown dataset kind '{other}'"))),
    };
    if let Some(key) = kv.keys().next() {
        return Err(Error::config(format!("unknown dataset option '{key}'")));
    }
    match (split, part.as_deref()) {
        (None, None) => Ok(ds),
        (Some(fraction), Some(p @ ("a" | "b"))) => {
            let (a, b) = split_matched_marginals(&ds, fraction, split_seed)?;
            Ok(if p == "a" { a } else { b })
        }
        _ => Err(Error::config(
            "dataset split needs both split=<fraction> and part=a|b",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_synth_has_exact_marginals() {
        let ds = synth_balanced_classification(10, 10, 4, 1).unwrap();
        assert_eq!(ds.len(), 100);
        let m = ds.moments();
        assert!(m.mean.iter().all(|&v| v == 0.1));
        let other = synth_balanced_classification(10, 10, 4, 2).unwrap();
        assert_ne!(ds.input(0), other.input(0));
        assert_eq!(other.moments(), m);
        assert_eq!(synth_balanced_classification(10, 10, 4, 1).unwrap(), ds);
    }

    #[test]
    fn toy_target_values() {
        assert_eq!(toy_target(0.0), 1.2);
        let v = toy_target(1.0);
        assert!((v - (0.2 + 20f64.sin() / 5.0)).abs() < 1e-15);
        assert!((v - 0.3826).abs() < 1e-4);
        for i in 0..=100_000 {
            let x = -1.0 + 2.0 * i as f64 / 100_000.0;
            let y = toy_target(x);
            assert!((0.0..=1.4).contains(&y), "x={x} y={y}");
        }
        let ds = toy_regression(64, 3).unwrap();
        assert!(ds.inputs().all(|x| (-1.0..=1.0).contains(&x[0])));
    }

    #[test]
    fn balanced_split_keeps_means() {
        let ds = synth_balanced_classification(10, 10, 3, 0).unwrap();
        let (a, b) = split_matched_marginals(&ds, 0.5, 9).unwrap();
        assert_eq!(a.len() + b.len(), ds.len());
        assert!(a.moments().mean.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(b.moments().mean.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn regression_split_matches_mean() {
        let ds = toy_regression(400, 5).unwrap();
        let (a, b) = split_matched_marginals(&ds, 0.5, 1).unwrap();
        let m = ds.moments();
        let std = m.variance(0).sqrt();
        assert!((a.moments().mean[0] - b.moments().mean[0]).abs() <= 0.05 * std);
    }

    #[test]
    fn duplicated_dataset_halves_agree() {
        let base = synth_balanced_classification(3, 2, 2, 0).unwrap();
        let idx: Vec<usize> = (0..base.len()).chain(0..base.len()).collect();
        let dup = base.subset(&idx, "dup").unwrap();
        let (a, b) = split_matched_marginals(&dup, 0.5, 0).unwrap();
        assert_eq!(a.moments(), b.moments());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = Dataset::new(
            "tiny",
            Task::BinaryClassification,
            1,
            1,
            vec![0.0, 1.0, 2.0],
            vec![0.0, 0.0, 1.0],
        )
        .unwrap();
        assert!(split_matched_marginals(&ds, 0.5, 0).is_err());
        assert!(split_matched_marginals(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn descriptors() {
        let ds = parse_descriptor("synth:classes=3,per_class=4,d=2,seed=1").unwrap();
        assert_eq!((ds.len(), ds.input_dim(), ds.target_dim()), (12, 2, 3));
        let a =
            parse_descriptor("synth:classes=3,per_class=4,d=2,seed=1,split=0.5,part=a").unwrap();
        assert_eq!(a.len(), 6);
        assert!(parse_descriptor("synth:classes=3,bogus=1").is_err());
        assert!(parse_descriptor("synth:split=0.5").is_err());
        assert_eq!(parse_descriptor("toy:n=10").unwrap().len(), 10);
    }

    #[test]
    fn onehot_validation() {
        assert!(Dataset::new(
            "bad",
            Task::MulticlassOnehot,
            1,
            2,
            vec![0.0],
            vec![1.0, 1.0]
        )
        .is_err());
    }
}
