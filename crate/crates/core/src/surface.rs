//! Loss evaluation over the slice hypercube, offset-aligned reconstruction
//! metrics, minimum localization and the transfer comparison.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::construction::SliceSpec;
use crate::data::Dataset;
use crate::losses::{per_example_loss, Heads, LabelMoments, LossFamily};
use crate::nn::{self, NetworkSpec, Trace};
use crate::patterns::{lattice_coord, lattice_points, unravel, Pattern};
use crate::pnm::Image;
use crate::{Error, Result};

/// Loss values on a lattice over `[0,1]^z`, node-major (axis 0 fastest) with
/// channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub z: usize,
    pub resolution: Vec<usize>,
    pub channels: usize,
    pub values: Vec<f64>,
    pub dataset: String,
}

impl SurfaceGrid {
    pub fn new(
        resolution: Vec<usize>,
        channels: usize,
        values: Vec<f64>,
        dataset: impl Into<String>,
    ) -> Result<Self> {
        if resolution.is_empty() || resolution.iter().any(|&r| r < 2) || channels == 0 {
            return Err(Error::config(
                "grid needs z >= 1, resolution >= 2 per axis and a channel",
            ));
        }
        let nodes: usize = resolution.iter().product();
        if values.len() != nodes * channels {
            return Err(Error::shape(format!(
                "{} values for {nodes} nodes x {channels} channels",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSurface {
                alpha: alpha_of(i / channels, &resolution),
            });
        }
        Ok(Self {
            z: resolution.len(),
            resolution,
            channels,
            values,
            dataset: dataset.into(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn value(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.node_count())
            .map(|n| self.value(n, channel))
            .collect()
    }

    /// Sum over channels at one node.
    pub fn total(&self, node: usize) -> f64 {
        self.values[node * self.channels..(node + 1) * self.channels]
            .iter()
            .sum()
    }

    pub fn alpha(&self, node: usize) -> Vec<f64> {
        alpha_of(node, &self.resolution)
    }

    pub fn max_abs_difference(&self, other: &Self) -> Result<f64> {
        if self.resolution != other.resolution || self.channels != other.channels {
            return Err(Error::shape("grids differ in resolution or channels"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV with columns `alpha0..`, `value0..`, one row per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.z)
            .map(|a| format!("alpha{a}"))
            .chain((0..self.channels).map(|c| format!("value{c}")))
            .collect();
        out.write_record(&header).map_err(csv_err)?;
        for node in 0..self.node_count() {
            let row: Vec<String> = self
                .alpha(node)
                .iter()
                .chain(&self.values[node * self.channels..(node + 1) * self.channels])
                .map(|v| v.to_string())
                .collect();
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`SurfaceGrid::write_csv`].
    pub fn read_csv<R: Read>(r: R, dataset: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let z = header.iter().filter(|h| h.starts_with("alpha")).count();
        let channels = header.iter().filter(|h| h.starts_with("value")).count();
        if z == 0 || channels == 0 || z + channels != header.len() {
            return Err(Error::Parse(
                "grid CSV needs alpha* then value* columns".into(),
            ));
        }
        let mut coords: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("grid CSV: {e}")))?;
            if row.len() != z + channels {
                return Err(Error::Parse("grid CSV row has the wrong width".into()));
            }
            coords.push(row[..z].to_vec());
            values.extend_from_slice(&row[z..]);
        }
        let resolution: Vec<usize> = (0..z)
            .map(|a| {
                coords
                    .iter()
                    .map(|c| c[a].to_bits())
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .collect();
        let grid = Self::new(resolution, channels, values, dataset)?;
        if coords.len() != grid.node_count()
            || coords
                .iter()
                .enumerate()
                .any(|(n, c)| alpha_of(n, &grid.resolution) != *c)
        {
            return Err(Error::Parse(
                "grid CSV rows are not a full lattice in axis-0-fastest order".into(),
            ));
        }
        Ok(grid)
    }

    /// Renders a 2D grid: columns follow `alpha0`, rows follow `alpha1`
    /// (row 0 at `alpha1 = 0`). One channel gives a PGM after min-max
    /// normalization. Three channels give a PPM; each channel is
    /// standardized, passed through a sigmoid and then min-max normalized.
    pub fn to_image(&self, maxval: u16) -> Result<Image> {
        if self.z != 2 {
            return Err(Error::config(format!(
                "only 2D grids can be rendered, got z = {}",
                self.z
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("rendering needs 1 or 3 channels"));
        }
        let per_channel: Vec<Vec<f64>> = (0..self.channels)
            .map(|c| {
                let v = self.channel(c);
                if self.channels == 3 {
                    min_max(&sigmoid_squash(&v))
                } else {
                    min_max(&v)
                }
            })
            .collect();
        let mut samples = Vec::with_capacity(self.values.len());
        for node in 0..self.node_count() {
            for ch in &per_channel {
                samples.push((ch[node] * maxval as f64).round() as u16);
            }
        }
        Image::new(
            self.resolution[0],
            self.resolution[1],
            self.channels,
            maxval,
            samples,
        )
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn alpha_of(node: usize, resolution: &[usize]) -> Vec<f64> {
    unravel(node, resolution)
        .iter()
        .zip(resolution)
        .map(|(&i, &r)| lattice_coord(i, r))
        .collect()
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn sigmoid_squash(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { 1.0 };
    v.iter()
        .map(|x| 1.0 / (1.0 + (-(x - mean) / scale).exp()))
        .collect()
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Full-dataset mean loss per head at `θ₀ + Σ αᵢθᵢ` for every lattice node.
pub fn evaluate_slice(
    spec: &NetworkSpec,
    slice: &SliceSpec,
    dataset: &Dataset,
    family: LossFamily,
    heads: &Heads,
    resolution: &[usize],
) -> Result<SurfaceGrid> {
    if resolution.len() != slice.z || resolution.iter().any(|&r| r < 2) {
        return Err(Error::config(format!(
            "resolution {resolution:?} must have {} axes of at least 2 nodes",
            slice.z
        )));
    }
    if dataset.input_dim() != spec.input_dim || dataset.target_dim() != heads.output_dim() {
        return Err(Error::shape(format!(
            "dataset is {}->{}, network is {}->{}",
            dataset.input_dim(),
            dataset.target_dim(),
            spec.input_dim,
            heads.output_dim()
        )));
    }
    let mut trace = Trace::new(spec);
    let mut values = Vec::with_capacity(resolution.iter().product::<usize>() * heads.count);
    let mut sums = vec![0.0; heads.count];
    for alpha in lattice_points(resolution) {
        let params = slice.point(&alpha)?;
        sums.iter_mut().for_each(|s| *s = 0.0);
        for i in 0..dataset.len() {
            nn::forward_into(spec, &params, dataset.input(i), &[], &mut trace);
            let (p, y) = (trace.output(), dataset.target(i));
            for (s, range) in sums.iter_mut().zip(heads.ranges()) {
                *s += per_example_loss(family, &p[range.clone()], &y[range]).map_err(|_| {
                    Error::NonFiniteSurface {
                        alpha: alpha.clone(),
                    }
                })?;
            }
        }
        for &s in &sums {
            let v = s / dataset.len() as f64;
            if !v.is_finite() {
                return Err(Error::NonFiniteSurface { alpha });
            }
            values.push(v);
        }
    }
    SurfaceGrid::new(
        resolution.to_vec(),
        heads.count,
        values,
        dataset.name.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    /// Optimal shift `a*` per channel.
    pub a_star: Vec<f64>,
    /// Aligned mean squared error per channel.
    pub channel_mse: Vec<f64>,
    /// Mean of `channel_mse`.
    pub mse: f64,
    pub max_abs: f64,
    pub pattern_argmin: Vec<f64>,
    pub surface_argmin: Vec<f64>,
    pub argmin_distance: f64,
}

impl ReconstructionReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "aligned mse      {:.6e}", self.mse);
        for (c, (a, m)) in self.a_star.iter().zip(&self.channel_mse).enumerate() {
            let _ = writeln!(s, "channel {c}        a* = {a:.6}  mse = {m:.6e}");
        }
        let _ = writeln!(s, "aligned max-abs  {:.6e}", self.max_abs);
        let _ = writeln!(s, "pattern argmin   {:?}", self.pattern_argmin);
        let _ = writeln!(s, "surface argmin   {:?}", self.surface_argmin);
        let _ = writeln!(s, "argmin distance  {:.6}", self.argmin_distance);
        s
    }
}

fn check_pattern(grid: &SurfaceGrid, pattern: &Pattern, offsets: &[f64]) -> Result<()> {
    if grid.z != pattern.z()
        || grid.channels != pattern.channels()
        || offsets.len() != grid.channels
    {
        return Err(Error::shape(format!(
            "grid is z={} with {} channels, pattern is z={} with {}, {} offsets",
            grid.z,
            grid.channels,
            pattern.z(),
            pattern.channels(),
            offsets.len()
        )));
    }
    Ok(())
}

/// Aligned MSE per channel for a given shift `a`.
pub fn aligned_mse_at(
    grid: &SurfaceGrid,
    pattern: &Pattern,
    offsets: &[f64],
    a: &[f64],
) -> Result<Vec<f64>> {
    check_pattern(grid, pattern, offsets)?;
    let t = pattern.eval_lattice(&grid.resolution);
    let n = grid.node_count() as f64;
    Ok((0..grid.channels)
        .map(|c| {
            (0..grid.node_count())
                .map(|node| {
                    let r = t[node * grid.channels + c] + offsets[c] - grid.value(node, c) + a[c];
                    r * r
                })
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Compares a grid with `T + c` after the per-channel shift `a*` that
/// minimizes the lattice mean of `(T + c − L + a)²`.
pub fn reconstruction_error(
    grid: &SurfaceGrid,
    pattern: &Pattern,
    offsets: &[f64],
) -> Result<ReconstructionReport> {
    check_pattern(grid, pattern, offsets)?;
    let t = pattern.eval_lattice(&grid.resolution);
    let ch = grid.channels;
    let n = grid.node_count() as f64;
    let a_star: Vec<f64> = (0..ch)
        .map(|c| {
            (0..grid.node_count())
                .map(|node| grid.value(node, c) - t[node * ch + c] - offsets[c])
                .sum::<f64>()
                / n
        })
        .collect();
    let channel_mse = aligned_mse_at(grid, pattern, offsets, &a_star)?;
    let max_abs = (0..grid.node_count())
        .flat_map(|node| (0..ch).map(move |c| (node, c)))
        .map(|(node, c)| (t[node * ch + c] + offsets[c] - grid.value(node, c) + a_star[c]).abs())
        .fold(0.0, f64::max);

    let pattern_totals: Vec<f64> = (0..grid.node_count())
        .map(|node| t[node * ch..(node + 1) * ch].iter().sum())
        .collect();
    let pattern_argmin = grid.alpha(argmin_row_major(&pattern_totals));
    let surface_argmin = locate_minimum(grid).alpha;
    let argmin_distance = pattern_argmin
        .iter()
        .zip(&surface_argmin)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(ReconstructionReport {
        mse: channel_mse.iter().sum::<f64>() / ch as f64,
        a_star,
        channel_mse,
        max_abs,
        pattern_argmin,
        surface_argmin,
        argmin_distance,
    })
}

fn argmin_row_major(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub node: usize,
    pub alpha: Vec<f64>,
    /// Channel-summed loss at the minimum.
    pub value: f64,
    /// Every node attaining exactly `value`, in lattice order.
    pub ties: Vec<Vec<f64>>,
}

/// Lattice argmin of the channel-summed loss; the first node in lattice
/// order wins exact ties.
pub fn locate_minimum(grid: &SurfaceGrid) -> Minimum {
    let totals: Vec<f64> = (0..grid.node_count()).map(|n| grid.total(n)).collect();
    let node = argmin_row_major(&totals);
    let value = totals[node];
    let ties = (0..totals.len())
        .filter(|&n| totals[n] == value)
        .map(|n| grid.alpha(n))
        .collect();
    Minimum {
        node,
        alpha: grid.alpha(node),
        value,
        ties,
    }
}

fn neighbours(node: usize, resolution: &[usize]) -> Vec<usize> {
    let idx = unravel(node, resolution);
    let mut out = Vec::with_capacity(2 * resolution.len());
    let mut stride = 1;
    for (a, &r) in resolution.iter().enumerate() {
        if idx[a] > 0 {
            out.push(node - stride);
        }
        if idx[a] + 1 < r {
            out.push(node + stride);
        }
        stride *= r;
    }
    out
}

/// Local minima of the channel-summed loss under axis-neighbour adjacency.
/// Connected plateaus of equal value count once and qualify when no node
/// bordering the plateau is lower.
pub fn local_minima(grid: &SurfaceGrid) -> Vec<Minimum> {
    let n = grid.node_count();
    let totals: Vec<f64> = (0..n).map(|i| grid.total(i)).collect();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let value = totals[start];
        let mut stack = vec![start];
        let mut members = Vec::new();
        let mut lower_border = false;
        seen[start] = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in neighbours(i, &grid.resolution) {
                if totals[j] < value {
                    lower_border = true;
                } else if totals[j] == value && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if lower_border {
            continue;
        }
        members.sort_unstable();
        out.push(Minimum {
            node: start,
            alpha: grid.alpha(start),
            value: totals[start],
            ties: members.iter().map(|&m| grid.alpha(m)).collect(),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub max_abs_difference: f64,
    pub moments_a: LabelMoments,
    pub moments_b: LabelMoments,
    /// Largest per-channel difference of `ȳ` or `mean(y²)`.
    pub moment_difference: f64,
}

/// Evaluates one slice on two datasets and compares the grids nodewise.
pub fn transfer_compare(
    spec: &NetworkSpec,
    slice: &SliceSpec,
    dataset_a: &Dataset,
    dataset_b: &Dataset,
    family: LossFamily,
    heads: &Heads,
    resolution: &[usize],
) -> Result<(SurfaceGrid, SurfaceGrid, TransferReport)> {
    let grid_a = evaluate_slice(spec, slice, dataset_a, family, heads, resolution)?;
    let grid_b = evaluate_slice(spec, slice, dataset_b, family, heads, resolution)?;
    let moments_a = dataset_a.moments();
    let moments_b = dataset_b.moments();
    let report = TransferReport {
        max_abs_difference: grid_a.max_abs_difference(&grid_b)?,
        moment_difference: moments_a.max_abs_difference(&moments_b),
        moments_a,
        moments_b,
    };
    Ok((grid_a, grid_b, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{Analytic, GridData};

    fn grid_1d(values: Vec<f64>) -> SurfaceGrid {
        SurfaceGrid::new(vec![values.len()], 1, values, "t").unwrap()
    }

    #[test]
    fn pure_offset_is_aligned_exactly() {
        let pattern = Pattern::analytic(Analytic::Ramp, 2).unwrap();
        let c = 0.3;
        let res = [5, 4];
        let t = pattern.eval_lattice(&res);
        let grid = SurfaceGrid::new(
            res.to_vec(),
            1,
            t.iter().map(|v| v + c + 0.7).collect(),
            "t",
        )
        .unwrap();
        let rep = reconstruction_error(&grid, &pattern, &[c]).unwrap();
        assert!((rep.a_star[0] - 0.7).abs() < 1e-12);
        assert!(rep.mse < 1e-24);
        assert_eq!(rep.pattern_argmin, vec![0.0, 0.0]);
        assert_eq!(rep.argmin_distance, 0.0);
    }

    #[test]
    fn a_star_is_optimal() {
        let pattern = Pattern::analytic(Analytic::Bimodal, 1).unwrap();
        let vals: Vec<f64> = (0..11).map(|i| (i as f64 * 0.7).sin()).collect();
        let grid = grid_1d(vals);
        let rep = reconstruction_error(&grid, &pattern, &[0.1]).unwrap();
        for da in [-0.01, 0.01] {
            let m = aligned_mse_at(&grid, &pattern, &[0.1], &[rep.a_star[0] + da]).unwrap();
            assert!(m[0] >= rep.mse);
        }
    }

    #[test]
    fn minimum_tie_break_and_ties() {
        let g = grid_1d(vec![1.0, 0.0, 2.0, 0.0, 1.0]);
        let m = locate_minimum(&g);
        assert_eq!(m.alpha, vec![0.25]);
        assert_eq!(m.ties, vec![vec![0.25], vec![0.75]]);
        let flat = grid_1d(vec![0.5; 4]);
        assert_eq!(locate_minimum(&flat).alpha, vec![0.0]);
        assert_eq!(local_minima(&flat).len(), 1);
        assert_eq!(local_minima(&g).len(), 2);
    }

    #[test]
    fn local_minima_in_two_dimensions() {
        let res = vec![3, 3];
        let mut v = vec![1.0; 9];
        v[4] = 0.0;
        let g = SurfaceGrid::new(res, 1, v, "t").unwrap();
        let mins = local_minima(&g);
        assert_eq!(mins.len(), 1);
        assert_eq!(mins[0].alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let vals: Vec<f64> = (0..12).map(|i| (i as f64).sqrt() / 3.0).collect();
        let g = SurfaceGrid::new(vec![3, 2], 2, vals, "t").unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("alpha0,alpha1,value0,value1\n0,0,"));
        let back = SurfaceGrid::read_csv(&buf[..], "t").unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn render_layout_and_channels() {
        let g = SurfaceGrid::new(vec![2, 2], 1, vec![0.0, 1.0, 2.0, 3.0], "t").unwrap();
        let img = g.to_image(255).unwrap();
        assert_eq!(img.samples, vec![0, 85, 170, 255]);
        let c = SurfaceGrid::new(vec![2, 2], 1, vec![0.4; 4], "t").unwrap();
        assert!(c.to_image(255).unwrap().samples.iter().all(|&s| s == 0));
        let mut vals = vec![0.0; 12];
        for n in 0..4 {
            vals[n * 3] = n as f64;
        }
        let rgb = SurfaceGrid::new(vec![2, 2], 3, vals, "t")
            .unwrap()
            .to_image(255)
            .unwrap();
        assert_eq!(rgb.channels, 3);
        assert!((0..4).all(|n| rgb.samples[n * 3 + 1] == 0 && rgb.samples[n * 3 + 2] == 0));
        assert!(SurfaceGrid::new(vec![3], 1, vec![0.0; 3], "t")
            .unwrap()
            .to_image(255)
            .is_err());
    }

    #[test]
    fn grid_rejects_non_finite() {
        let err = SurfaceGrid::new(vec![2], 1, vec![0.0, f64::NAN], "t").unwrap_err();
        assert!(matches!(err, Error::NonFiniteSurface { alpha } if alpha == vec![1.0]));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pattern = Pattern::grid(GridData::new(vec![2, 2], 1, vec![0.0; 4]).unwrap());
        assert!(reconstruction_error(&grid_1d(vec![0.0; 3]), &pattern, &[0.0]).is_err());
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
    }
}
