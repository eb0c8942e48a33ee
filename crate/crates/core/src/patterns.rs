//! Target patterns `T: [0,1]^z → [0,1]`.
//!
//! Grid patterns are stored with axis 0 varying fastest, so a 2D grid has the
//! same memory layout as an image whose columns run along `h₁` and whose rows
//! run along `h₂` (row 0 is `h₂ = 0`). Between nodes the pattern is
//! multilinear; at nodes it returns the stored value exactly.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pnm::{self, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    resolution: Vec<usize>,
    channels: usize,
    /// Node-major, channel-interleaved: `values[node * channels + c]`.
    values: Vec<f64>,
}

impl GridData {
    pub fn new(resolution: Vec<usize>, channels: usize, values: Vec<f64>) -> Result<Self> {
        if resolution.is_empty() || resolution.contains(&0) || channels == 0 {
            return Err(Error::config("grid needs positive resolution and channels"));
        }
        let nodes: usize = resolution.iter().product();
        if values.len() != nodes * channels {
            return Err(Error::shape(format!(
                "grid {resolution:?} x {channels} channels needs {} values, got {}",
                nodes * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain {
                value: *v,
                reason: "pattern values must lie in [0, 1]",
            });
        }
        Ok(Self {
            resolution,
            channels,
            values,
        })
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn node_value(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Analytic {
    /// Two Gaussian wells at `h = ±0.5` on `[-1, 1]`, reached through `u ↦ 2u − 1`.
    Bimodal,
    /// Mean of the coordinates.
    Ramp,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternSource {
    Grid(GridData),
    Analytic(Analytic),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    z: usize,
    channels: usize,
    source: PatternSource,
}

/// `1 − (exp(−(h−0.5)²/0.1) + exp(−(h+0.5)²/0.1))` on `h ∈ [−1, 1]`, unclamped.
pub fn bimodal_raw(h: f64) -> f64 {
    1.0 - ((-(h - 0.5).powi(2) / 0.1).exp() + (-(h + 0.5).powi(2) / 0.1).exp())
}

/// The bimodal pattern on the canonical domain, clamped to `[0, 1]`.
pub fn analytic_bimodal(u: f64) -> f64 {
    bimodal_raw(2.0 * u - 1.0).clamp(0.0, 1.0)
}

/// Lattice coordinate of node `i` on an axis with `res` nodes.
#[inline]
pub fn lattice_coord(i: usize, res: usize) -> f64 {
    if res <= 1 {
        0.0
    } else {
        i as f64 / (res - 1) as f64
    }
}

/// Splits a flat node index (axis 0 fastest) into per-axis indices.
pub fn unravel(mut node: usize, resolution: &[usize]) -> Vec<usize> {
    resolution
        .iter()
        .map(|&r| {
            let i = node % r;
            node /= r;
            i
        })
        .collect()
}

/// Coordinates of every lattice node, axis 0 fastest.
pub fn lattice_points(resolution: &[usize]) -> Vec<Vec<f64>> {
    let n: usize = resolution.iter().product();
    (0..n)
        .map(|node| {
            unravel(node, resolution)
                .iter()
                .zip(resolution)
                .map(|(&i, &r)| lattice_coord(i, r))
                .collect()
        })
        .collect()
}

impl Pattern {
    pub fn grid(data: GridData) -> Self {
        Self {
            z: data.resolution.len(),
            channels: data.channels,
            source: PatternSource::Grid(data),
        }
    }

    pub fn analytic(kind: Analytic, z: usize) -> Result<Self> {
        if z == 0 {
            return Err(Error::config("pattern dimensionality must be >= 1"));
        }
        match kind {
            Analytic::Bimodal if z != 1 => {
                return Err(Error::config("the bimodal pattern is one-dimensional"))
            }
            Analytic::Constant(t) if !(0.0..=1.0).contains(&t) => {
                return Err(Error::Domain {
                    value: t,
                    reason: "pattern values must lie in [0, 1]",
                })
            }
            _ => {}
        }
        Ok(Self {
            z,
            channels: 1,
            source: PatternSource::Analytic(kind),
        })
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn source(&self) -> &PatternSource {
        &self.source
    }

    /// `T(h)` per channel. Coordinates outside `[0,1]` are clamped.
    pub fn eval(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.eval_into(h, &mut out);
        out
    }

    pub fn eval_into(&self, h: &[f64], out: &mut [f64]) {
        assert_eq!(h.len(), self.z, "pattern is {}-dimensional", self.z);
        match &self.source {
            PatternSource::Analytic(kind) => {
                let u = |i: usize| clamp_unit(h[i]);
                out[0] = match *kind {
                    Analytic::Bimodal => analytic_bimodal(u(0)),
                    Analytic::Ramp => (0..self.z).map(u).sum::<f64>() / self.z as f64,
                    Analytic::Constant(t) => t,
                };
            }
            PatternSource::Grid(grid) => multilinear(grid, h, out),
        }
    }

    /// `(min, max)` of one channel over `[0,1]^z`.
    pub fn range(&self, channel: usize) -> (f64, f64) {
        match &self.source {
            PatternSource::Grid(grid) => (0..grid.node_count())
                .map(|n| grid.node_value(n, channel))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                }),
            PatternSource::Analytic(Analytic::Constant(t)) => (*t, *t),
            PatternSource::Analytic(Analytic::Ramp) => (0.0, 1.0),
            PatternSource::Analytic(Analytic::Bimodal) => (0..=10_000)
                .map(|i| analytic_bimodal(lattice_coord(i, 10_001)))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                }),
        }
    }

    /// Pattern values on a lattice, node-major and channel-interleaved.
    pub fn eval_lattice(&self, resolution: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(resolution.iter().product::<usize>() * self.channels);
        let mut buf = vec![0.0; self.channels];
        for h in lattice_points(resolution) {
            self.eval_into(&h, &mut buf);
            out.extend_from_slice(&buf);
        }
        out
    }

    /// Rasterizes a 2D pattern (grid or analytic) into an 8/16-bit image.
    pub fn to_image(&self, resolution: [usize; 2], maxval: u16) -> Result<Image> {
        if self.z != 2 {
            return Err(Error::config("only 2D patterns can be saved as images"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("images need 1 or 3 pattern channels"));
        }
        let samples = self
            .eval_lattice(&resolution)
            .into_iter()
            .map(|v| (v * maxval as f64).round() as u16)
            .collect();
        Image::new(resolution[0], resolution[1], self.channels, maxval, samples)
    }
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn multilinear(grid: &GridData, h: &[f64], out: &mut [f64]) {
    let z = grid.resolution.len();
    let mut base = vec![0usize; z];
    let mut frac = vec![0.0f64; z];
    for a in 0..z {
        let r = grid.resolution[a];
        if r == 1 {
            continue;
        }
        let t = clamp_unit(h[a]) * (r - 1) as f64;
        let nearest = t.round();
        // Snap so lattice coordinates hit nodes exactly.
        let t = if (t - nearest).abs() < 1e-9 {
            nearest
        } else {
            t
        };
        let i0 = (t.floor() as usize).min(r - 2);
        base[a] = i0;
        frac[a] = t - i0 as f64;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for corner in 0..(1usize << z) {
        let mut weight = 1.0;
        let mut node = 0;
        let mut stride = 1;
        for a in 0..z {
            let upper = (corner >> a) & 1 == 1;
            let w = if upper { frac[a] } else { 1.0 - frac[a] };
            weight *= w;
            node += (base[a] + upper as usize) * stride;
            stride *= grid.resolution[a];
        }
        if weight == 0.0 {
            continue;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o += weight * grid.node_value(node, c);
        }
    }
}

/// Loads a PGM (1 channel) or PPM (3 channels) image as a 2D grid pattern.
/// Samples are rescaled from `[0, maxval]` to `[0, 1]`.
pub fn load_pattern_pgm(path: impl AsRef<Path>) -> Result<Pattern> {
    let bytes = fs::read(path.as_ref())?;
    pattern_from_image(&pnm::decode(&bytes)?)
}

pub fn pattern_from_image(img: &Image) -> Result<Pattern> {
    let scale = img.maxval as f64;
    let values = img.samples.iter().map(|&s| s as f64 / scale).collect();
    Ok(Pattern::grid(GridData::new(
        vec![img.width, img.height],
        img.channels,
        values,
    )?))
}

/// Writes a 2D grid pattern back to PGM/PPM at its own resolution.
pub fn save_pattern_pgm(pattern: &Pattern, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let res = match pattern.source() {
        PatternSource::Grid(g) if g.resolution.len() == 2 => [g.resolution[0], g.resolution[1]],
        _ => return Err(Error::config("only 2D grid patterns can be saved")),
    };
    let img = pattern.to_image(res, maxval)?;
    fs::write(path, img.to_bytes())?;
    Ok(())
}

/// CSV grid: for `z ≤ 2` each line is one grid row along `h₁` (a single line
/// for `z = 1`, line `r` holding `h₂ = r` for `z = 2`). For `z = 3` the first
/// line is `res,<r1>,<r2>,<r3>` followed by `r2 · r3` lines of `r1` values,
/// `h₂` varying fastest.
pub fn load_pattern_csv(path: impl AsRef<Path>, z: usize) -> Result<Pattern> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_pattern_csv(&text, z)
}

pub fn parse_pattern_csv(text: &str, z: usize) -> Result<Pattern> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Parse(format!("'{s}' is not a number")))
    };

    let declared = if z == 3 {
        let header = rows
            .first()
            .filter(|r| r.first().map(String::as_str) == Some("res") && r.len() == 4)
            .ok_or_else(|| Error::Parse("3D csv patterns need a 'res,r1,r2,r3' header".into()))?;
        let res = header[1..]
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.remove(0);
        Some(res)
    } else {
        None
    };

    let width = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Parse("empty pattern csv".into()))?;
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Parse(format!(
            "ragged csv: row {i} has {} values, expected {width}",
            row.len()
        )));
    }
    let values = rows
        .iter()
        .flatten()
        .map(|s| parse(s))
        .collect::<Result<Vec<_>>>()?;
    let resolution = match z {
        1 => {
            if rows.len() != 1 {
                return Err(Error::Parse("1D csv patterns hold a single row".into()));
            }
            vec![width]
        }
        2 => vec![width, rows.len()],
        3 => {
            let res = declared.expect("parsed above");
            if res[0] != width || res[1] * res[2] != rows.len() {
                return Err(Error::Parse(format!(
                    "3D csv body does not match declared resolution {res:?}"
                )));
            }
            res
        }
        _ => return Err(Error::config("csv patterns support z = 1, 2 or 3")),
    };
    Ok(Pattern::grid(GridData::new(resolution, 1, values)?))
}

/// Parses a pattern descriptor:
/// `pgm:<path>`, `ppm:<path>`, `csv:<path>`, `bimodal`, `ramp[:<z>]`,
/// `const:<value>[:<z>]`.
pub fn parse_descriptor(desc: &str) -> Result<Pattern> {
    let (kind, arg) = desc.split_once(':').unwrap_or((desc, ""));
    match kind {
        "pgm" | "ppm" | "pnm" => load_pattern_pgm(arg),
        "csv" => {
            let text = fs::read_to_string(arg)?;
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let z = if first.trim_start().starts_with("res") {
                3
            } else if text.lines().filter(|l| !l.trim().is_empty()).count() == 1 {
                1
            } else {
                2
            };
            parse_pattern_csv(&text, z)
        }
        "bimodal" => Pattern::analytic(Analytic::Bimodal, 1),
        "ramp" => {
            let z = if arg.is_empty() { 1 } else { parse_usize(arg)? };
            Pattern::analytic(Analytic::Ramp, z)
        }
        "const" => {
            let (value, z) = arg.split_once(':').unwrap_or((arg, "1"));
            let value = value
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad constant '{value}'")))?;
            Pattern::analytic(Analytic::Constant(value), parse_usize(z)?)
        }
        other => Err(Error::config(format!("unknown pattern kind '{other}'"))),
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::config(format!("expected a positive integer, got '{s}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    UniformRandom { seed: u64 },
    Lattice,
}

/// Draws `count` points of `[0,1]^z`: i.i.d. uniform, or a regular lattice
/// (`count` must then be a perfect `z`-th power).
pub fn sample_h(z: usize, count: usize, mode: SamplingMode) -> Result<Vec<Vec<f64>>> {
    if count == 0 || z == 0 {
        return Err(Error::config("sample_h needs count >= 1 and z >= 1"));
    }
    match mode {
        SamplingMode::UniformRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(sample_uniform(&mut rng, z, count))
        }
        SamplingMode::Lattice => {
            let side = (count as f64).powf(1.0 / z as f64).round() as usize;
            let side = [side.saturating_sub(1), side, side + 1]
                .into_iter()
                .find(|s| s.checked_pow(z as u32) == Some(count))
                .ok_or_else(|| {
                    Error::config(format!(
                        "lattice count {count} is not a perfect power of {z}"
                    ))
                })?;
            Ok(lattice_points(&vec![side; z]))
        }
    }
}

pub fn sample_uniform<R: Rng>(rng: &mut R, z: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..z).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_values() {
        let raw = bimodal_raw(0.5);
        assert!((raw + (-10.0f64).exp()).abs() < 1e-15);
        assert_eq!(analytic_bimodal(0.75), 0.0);
        assert_eq!(bimodal_raw(-0.5), bimodal_raw(0.5));
        let center = bimodal_raw(0.0);
        assert!((center - (1.0 - 2.0 * (-2.5f64).exp())).abs() < 1e-15);
        assert!((center - 0.8358).abs() < 1e-4);
    }

    #[test]
    fn linear_interpolation_1d() {
        let p = Pattern::grid(GridData::new(vec![2], 1, vec![0.0, 1.0]).unwrap());
        assert_eq!(p.eval(&[0.5]), vec![0.5]);
        assert_eq!(p.eval(&[2.0]), vec![1.0]);
    }

    #[test]
    fn nodes_are_exact() {
        let values: Vec<f64> = (0..7 * 5)
            .map(|i| ((i * 7919) % 101) as f64 / 100.0)
            .collect();
        let p = Pattern::grid(GridData::new(vec![7, 5], 1, values.clone()).unwrap());
        for (node, h) in lattice_points(&[7, 5]).iter().enumerate() {
            assert_eq!(p.eval(h)[0].to_bits(), values[node].to_bits());
        }
    }

    #[test]
    fn out_of_range_grid_rejected() {
        assert!(GridData::new(vec![2], 1, vec![0.0, 1.5]).is_err());
        assert!(parse_pattern_csv("0,1.5\n", 1).is_err());
    }

    #[test]
    fn csv_forms() {
        let p = parse_pattern_csv("0,0.5,1\n", 1).unwrap();
        assert_eq!(p.z(), 1);
        assert_eq!(p.eval(&[0.5]), vec![0.5]);
        let p = parse_pattern_csv("0,1\n1,0\n", 2).unwrap();
        assert_eq!(p.eval(&[1.0, 0.0]), vec![1.0]);
        assert!(parse_pattern_csv("0,1\n1\n", 2).is_err());
        let body = "res,2,2,2\n0,1\n1,0\n0,0\n1,1\n";
        let p = parse_pattern_csv(body, 3).unwrap();
        assert_eq!(p.z(), 3);
        assert_eq!(p.eval(&[1.0, 1.0, 1.0]), vec![1.0]);
        assert_eq!(p.eval(&[0.0, 1.0, 1.0]), vec![1.0]);
        assert_eq!(p.eval(&[1.0, 0.0, 1.0]), vec![0.0]);
    }

    #[test]
    fn lattice_sampling() {
        let pts = sample_h(2, 9, SamplingMode::Lattice).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.5, 0.0]);
        assert_eq!(pts[8], vec![1.0, 1.0]);
        assert!(sample_h(2, 8, SamplingMode::Lattice).is_err());
        assert_eq!(sample_h(3, 27, SamplingMode::Lattice).unwrap().len(), 27);
    }

    #[test]
    fn uniform_sampling_is_reproducible_and_centered() {
        let a = sample_h(2, 10_000, SamplingMode::UniformRandom { seed: 3 }).unwrap();
        let b = sample_h(2, 10_000, SamplingMode::UniformRandom { seed: 3 }).unwrap();
        assert_eq!(a, b);
        for axis in 0..2 {
            let mean = a.iter().map(|h| h[axis]).sum::<f64>() / a.len() as f64;
            assert!((mean - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn descriptors() {
        assert_eq!(parse_descriptor("bimodal").unwrap().z(), 1);
        assert_eq!(parse_descriptor("ramp:2").unwrap().z(), 2);
        let c = parse_descriptor("const:0.25:3").unwrap();
        assert_eq!(c.eval(&[0.1, 0.2, 0.3]), vec![0.25]);
        assert!(parse_descriptor("const:2").is_err());
        assert!(parse_descriptor("spiral").is_err());
    }
}
