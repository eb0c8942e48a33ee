//! Per-example losses, the implicit activation they induce on an
//! input-independent network, and the inverses used to build regression
//! targets.
//!
//! When the network output does not depend on `x`, the empirical loss of a
//! prediction `p` is `σ(p) = 1/N Σ ℓ(p, yᵢ)`, which only depends on the label
//! moments. For the squared loss that is `(p − ȳ)² + Var(y)` per channel; for
//! binary cross-entropy it is `−ȳ log p − (1 − ȳ) log(1 − p)`.
//!
//! Multi-channel predictions sum the per-channel terms. Inverting a sum is
//! not unique, so [`ImplicitActivation::sigma_inverse`] and
//! [`per_example_inverse_split`] divide the excess over the minimum equally
//! between channels and then take the largest pre-image of each channel.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slack allowed below the minimum of σ before a value is unrepresentable.
pub const INVERSE_SLACK: f64 = 1e-12;

/// Default distance kept between the shifted pattern and the minimum of σ.
pub const DEFAULT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Squared,
    BinaryCrossEntropy,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Squared => "squared",
            LossFamily::BinaryCrossEntropy => "bce",
        }
    }

    /// Training objective used when this loss is also the task loss.
    pub fn objective(self) -> crate::nn::Objective {
        match self {
            LossFamily::Squared => crate::nn::Objective::Squared,
            LossFamily::BinaryCrossEntropy => crate::nn::Objective::BinaryCrossEntropy,
        }
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" | "mse" | "l2" => Ok(LossFamily::Squared),
            "bce" | "binary_cross_entropy" | "cross_entropy" => Ok(LossFamily::BinaryCrossEntropy),
            other => Err(Error::config(format!("unknown loss family '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `ℓ(p, y)` summed over channels.
pub fn per_example_loss(family: LossFamily, p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::shape(format!(
            "prediction has {} channels, label has {}",
            p.len(),
            y.len()
        )));
    }
    let mut total = 0.0;
    match family {
        LossFamily::Squared => {
            for (&p, &y) in p.iter().zip(y) {
                total += (p - y) * (p - y);
            }
        }
        LossFamily::BinaryCrossEntropy => {
            for (&p, &y) in p.iter().zip(y) {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Domain {
                        value: p,
                        reason: "binary cross-entropy needs a prediction in (0, 1)",
                    });
                }
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
    }
    Ok(total)
}

/// Empirical first and second label moments, per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMoments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub mean_sq: Vec<f64>,
}

impl LabelMoments {
    pub fn new(count: usize, mean: Vec<f64>, mean_sq: Vec<f64>) -> Result<Self> {
        if count == 0 || mean.is_empty() || mean.len() != mean_sq.len() {
            return Err(Error::config(
                "label moments need a positive count and matching channels",
            ));
        }
        Ok(Self {
            count,
            mean,
            mean_sq,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `ȳ` of the first channel.
    pub fn mean_y(&self) -> f64 {
        self.mean[0]
    }

    pub fn variance(&self, channel: usize) -> f64 {
        self.mean_sq[channel] - self.mean[channel] * self.mean[channel]
    }

    pub fn restrict(&self, range: Range<usize>) -> Self {
        Self {
            count: self.count,
            mean: self.mean[range.clone()].to_vec(),
            mean_sq: self.mean_sq[range].to_vec(),
        }
    }

    /// Largest per-channel difference in either moment.
    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        self.mean
            .iter()
            .zip(&other.mean)
            .chain(self.mean_sq.iter().zip(&other.mean_sq))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn label_moments<'a, I>(labels: I) -> Result<LabelMoments>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    for y in labels {
        if count == 0 {
            sum = vec![0.0; y.len()];
            sum_sq = vec![0.0; y.len()];
        } else if y.len() != sum.len() {
            return Err(Error::shape("labels have inconsistent channel counts"));
        }
        for ((s, s2), &v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(y) {
            *s += v;
            *s2 += v * v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::config("label moments of an empty label list"));
    }
    let n = count as f64;
    LabelMoments::new(
        count,
        sum.into_iter().map(|s| s / n).collect(),
        sum_sq.into_iter().map(|s| s / n).collect(),
    )
}

/// The loss family together with the label statistics that define σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitActivation {
    pub family: LossFamily,
    pub moments: LabelMoments,
}

impl ImplicitActivation {
    pub fn new(family: LossFamily, moments: LabelMoments) -> Result<Self> {
        if family == LossFamily::BinaryCrossEntropy
            && moments.mean.iter().any(|m| !(0.0..=1.0).contains(m))
        {
            return Err(Error::config(
                "binary cross-entropy needs labels in {0, 1}; label mean outside [0, 1]",
            ));
        }
        Ok(Self { family, moments })
    }

    pub fn channels(&self) -> usize {
        self.moments.channels()
    }

    pub fn restrict(&self, range: Range<usize>) -> Self {
        Self {
            family: self.family,
            moments: self.moments.restrict(range),
        }
    }

    fn check_channels(&self, n: usize) -> Result<()> {
        if n != self.channels() {
            return Err(Error::shape(format!(
                "prediction has {n} channels, activation has {}",
                self.channels()
            )));
        }
        Ok(())
    }

    /// σ(p), summed over channels.
    pub fn sigma_eval(&self, p: &[f64]) -> Result<f64> {
        self.check_channels(p.len())?;
        let mut total = 0.0;
        for (c, &p) in p.iter().enumerate() {
            total += channel_sigma(
                self.family,
                self.moments.mean[c],
                self.moments.mean_sq[c],
                p,
            )?;
        }
        Ok(total)
    }

    /// Minimizer `p*` (per channel) and minimum value `v*` of σ.
    pub fn sigma_min(&self) -> (Vec<f64>, f64) {
        let p_star = self.moments.mean.clone();
        let v_star = (0..self.channels()).map(|c| self.channel_min(c)).sum();
        (p_star, v_star)
    }

    fn channel_min(&self, c: usize) -> f64 {
        let m = self.moments.mean[c];
        match self.family {
            LossFamily::Squared => self.moments.variance(c),
            LossFamily::BinaryCrossEntropy => binary_entropy(m),
        }
    }

    /// Largest pre-image of `v`. Values within [`INVERSE_SLACK`] below the
    /// minimum are clamped onto it.
    pub fn sigma_inverse(&self, v: f64) -> Result<Vec<f64>> {
        let (p_star, v_star) = self.sigma_min();
        if !v.is_finite() || v < v_star - INVERSE_SLACK {
            return Err(Error::Unrepresentable { value: v, v_star });
        }
        let excess = (v - v_star).max(0.0) / self.channels() as f64;
        if excess == 0.0 {
            return Ok(p_star);
        }
        (0..self.channels())
            .map(|c| {
                let target = self.channel_min(c) + excess;
                Ok(channel_inverse(
                    self.family,
                    self.moments.mean[c],
                    self.moments.mean_sq[c],
                    target,
                ))
            })
            .collect()
    }
}

fn binary_entropy(m: f64) -> f64 {
    let mut h = 0.0;
    if m > 0.0 {
        h -= m * m.ln();
    }
    if m < 1.0 {
        h -= (1.0 - m) * (1.0 - m).ln();
    }
    h
}

fn channel_sigma(family: LossFamily, mean: f64, mean_sq: f64, p: f64) -> Result<f64> {
    match family {
        LossFamily::Squared => Ok((p - mean) * (p - mean) + (mean_sq - mean * mean)),
        LossFamily::BinaryCrossEntropy => {
            let domain = Error::Domain {
                value: p,
                reason: "implicit cross-entropy activation is infinite here",
            };
            if !(0.0..=1.0).contains(&p) {
                return Err(domain);
            }
            let mut v = 0.0;
            if mean > 0.0 {
                if p <= 0.0 {
                    return Err(domain);
                }
                v -= mean * p.ln();
            }
            if mean < 1.0 {
                if p >= 1.0 {
                    return Err(domain);
                }
                v -= (1.0 - mean) * (1.0 - p).ln();
            }
            Ok(v)
        }
    }
}

/// Largest `p` with σ_c(p) = v, assuming `v` is at least the channel minimum.
fn channel_inverse(family: LossFamily, mean: f64, mean_sq: f64, v: f64) -> f64 {
    match family {
        LossFamily::Squared => {
            let v_star = mean_sq - mean * mean;
            mean + (v - v_star).max(0.0).sqrt()
        }
        LossFamily::BinaryCrossEntropy => {
            if mean >= 1.0 {
                // σ(p) = −ln p is decreasing; its only pre-image.
                return (-v).exp();
            }
            let sigma = |p: f64| channel_sigma(family, mean, mean_sq, p).unwrap_or(f64::INFINITY);
            // σ increases on [ȳ, 1); bisect down to adjacent floats.
            let (mut lo, mut hi) = (mean, 1.0);
            for _ in 0..2048 {
                let mid = lo + (hi - lo) / 2.0;
                if mid <= lo || mid >= hi {
                    break;
                }
                if sigma(mid) < v {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi >= 1.0 || (sigma(lo) - v).abs() <= (sigma(hi) - v).abs() {
                lo
            } else {
                hi
            }
        }
    }
}

/// `ℓᵢ⁻¹(v)` for a single channel: squared loss takes the branch above the
/// label, cross-entropy has a single branch for each label value.
pub fn per_example_inverse(family: LossFamily, y: f64, v: f64) -> Result<f64> {
    match family {
        LossFamily::Squared => {
            if !(v >= 0.0) {
                return Err(Error::Domain {
                    value: v,
                    reason: "squared loss values are non-negative",
                });
            }
            Ok(y + v.sqrt())
        }
        LossFamily::BinaryCrossEntropy => {
            if !(v > 0.0) {
                return Err(Error::Domain {
                    value: v,
                    reason: "cross-entropy inverse needs a positive loss value",
                });
            }
            if y == 1.0 {
                Ok((-v).exp())
            } else if y == 0.0 {
                Ok(-(-v).exp_m1())
            } else {
                Err(Error::Domain {
                    value: y,
                    reason: "cross-entropy inverse needs a label in {0, 1}",
                })
            }
        }
    }
}

/// Multi-channel `ℓᵢ⁻¹(v)`: each channel receives `v / channels`.
pub fn per_example_inverse_split(family: LossFamily, y: &[f64], v: f64) -> Result<Vec<f64>> {
    let share = v / y.len() as f64;
    y.iter()
        .map(|&y| per_example_inverse(family, y, share))
        .collect()
}

/// Offset `c` that lifts `[pattern_min, pattern_max]` into
/// `[v* + margin, ∞) ⊆ Im(σ)`.
pub fn coverage_offset(
    act: &ImplicitActivation,
    pattern_min: f64,
    pattern_max: f64,
    margin: f64,
) -> f64 {
    debug_assert!(pattern_min <= pattern_max && margin >= 0.0);
    let (_, v_star) = act.sigma_min();
    v_star + margin - pattern_min
}

/// Offset for per-example inverses, whose losses bottom out at zero.
pub fn per_example_offset(pattern_min: f64, margin: f64) -> f64 {
    margin - pattern_min
}

/// `(p, σ(p))` on `n` evenly spaced points of `[lo, hi]` (`p` broadcast to
/// every channel). Points where σ is undefined are skipped.
pub fn sigma_profile(act: &ImplicitActivation, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .filter_map(|i| {
            let p = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = act.sigma_eval(&vec![p; act.channels()]).ok()?;
            Some((p, v))
        })
        .collect()
}

pub fn write_sigma_profile_csv<W: Write>(w: W, profile: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["p", "sigma"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for (p, s) in profile {
        out.write_record([p.to_string(), s.to_string()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// How network outputs group into surface channels ("heads").
///
/// With one pattern channel the whole output is one head and its loss sums
/// over every output channel. With as many pattern channels as outputs each
/// output is its own head. In general `output_dim` must be a multiple of the
/// pattern channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    pub count: usize,
    pub size: usize,
}

impl Heads {
    pub fn new(pattern_channels: usize, output_dim: usize) -> Result<Self> {
        if pattern_channels == 0 || output_dim % pattern_channels != 0 {
            return Err(Error::config(format!(
                "{pattern_channels} pattern channels cannot be split over {output_dim} outputs"
            )));
        }
        Ok(Self {
            count: pattern_channels,
            size: output_dim / pattern_channels,
        })
    }

    pub fn range(&self, head: usize) -> Range<usize> {
        head * self.size..(head + 1) * self.size
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.count).map(|h| self.range(h))
    }

    pub fn output_dim(&self) -> usize {
        self.count * self.size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(family: LossFamily, labels: &[f64]) -> ImplicitActivation {
        let rows: Vec<[f64; 1]> = labels.iter().map(|&y| [y]).collect();
        ImplicitActivation::new(family, label_moments(rows.iter().map(|r| &r[..])).unwrap())
            .unwrap()
    }

    fn direct_average(family: LossFamily, p: f64, labels: &[f64]) -> f64 {
        labels
            .iter()
            .map(|&y| match family {
                LossFamily::Squared => (p - y).powi(2),
                LossFamily::BinaryCrossEntropy => -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
            })
            .sum::<f64>()
            / labels.len() as f64
    }

    #[test]
    fn per_example_values() {
        assert_eq!(
            per_example_loss(LossFamily::Squared, &[0.4], &[0.4]).unwrap(),
            0.0
        );
        let v = per_example_loss(LossFamily::Squared, &[0.2], &[1.0]).unwrap();
        assert!((v - 0.64).abs() < 1e-15);
        let v = per_example_loss(LossFamily::BinaryCrossEntropy, &[0.5], &[1.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(per_example_loss(LossFamily::BinaryCrossEntropy, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn moments_of_balanced_and_constant_labels() {
        let m = act(LossFamily::Squared, &[0.0, 1.0, 1.0, 0.0]).moments;
        assert_eq!(m.mean_y(), 0.5);
        assert_eq!(m.mean_sq[0], 0.5);
        let m = act(LossFamily::Squared, &[1.0; 5]).moments;
        assert_eq!(m.mean_y(), 1.0);
        assert_eq!(m.variance(0), 0.0);
        assert!(label_moments(std::iter::empty::<&[f64]>()).is_err());
    }

    #[test]
    fn sigma_matches_direct_average() {
        let labels = [0.0, 1.0, 1.0, 0.0];
        let sq = act(LossFamily::Squared, &labels);
        assert!((sq.sigma_eval(&[0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert!((sq.sigma_eval(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(
            (sq.sigma_eval(&[0.5]).unwrap() - direct_average(LossFamily::Squared, 0.5, &labels))
                .abs()
                < 1e-15
        );
        let bce = act(LossFamily::BinaryCrossEntropy, &labels);
        let v = bce.sigma_eval(&[0.5]).unwrap();
        assert!((v - direct_average(LossFamily::BinaryCrossEntropy, 0.5, &labels)).abs() < 1e-15);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce.sigma_eval(&[1.0]).is_err());
    }

    #[test]
    fn sigma_minimum() {
        let sq = act(LossFamily::Squared, &[0.0, 1.0]);
        assert_eq!(sq.sigma_min(), (vec![0.5], 0.25));
        let (p, v) = act(LossFamily::Squared, &[0.3; 4]).sigma_min();
        assert_eq!(p, vec![0.3]);
        assert!(v.abs() < 1e-15);

        let bce = act(LossFamily::BinaryCrossEntropy, &[0.0, 1.0]);
        let (p, v) = bce.sigma_min();
        assert_eq!(p, vec![0.5]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // Numeric minimization oracle over a fine grid of (0, 1).
        let grid_min = (1..10_000)
            .map(|i| bce.sigma_eval(&[i as f64 / 10_000.0]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(v <= grid_min + 1e-15 && grid_min - v < 1e-7);
    }

    #[test]
    fn sigma_inverse_examples() {
        let sq = act(LossFamily::Squared, &[0.0, 1.0]);
        assert!((sq.sigma_inverse(0.5).unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(sq.sigma_inverse(0.25).unwrap(), vec![0.5]);
        assert_eq!(sq.sigma_inverse(0.25 - 1e-13).unwrap(), vec![0.5]);
        match sq.sigma_inverse(0.2) {
            Err(Error::Unrepresentable { v_star, .. }) => assert_eq!(v_star, 0.25),
            other => panic!("expected unrepresentable, got {other:?}"),
        }
        let bce = act(LossFamily::BinaryCrossEntropy, &[0.0, 0.0, 1.0]);
        let (p_star, v_star) = bce.sigma_min();
        assert_eq!(bce.sigma_inverse(v_star).unwrap(), p_star);
        let p = bce.sigma_inverse(v_star + 0.7).unwrap()[0];
        assert!(p > p_star[0]);
        assert!((bce.sigma_eval(&[p]).unwrap() - v_star - 0.7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cross_entropy_means() {
        for labels in [[1.0, 1.0], [0.0, 0.0]] {
            let a = act(LossFamily::BinaryCrossEntropy, &labels);
            let (_, v_star) = a.sigma_min();
            assert_eq!(v_star, 0.0);
            for v in [0.01, 0.5, 3.0] {
                let p = a.sigma_inverse(v).unwrap();
                assert!((a.sigma_eval(&p).unwrap() - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_channel_inverse_splits_excess() {
        let rows = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let m = label_moments(rows.iter().map(|r| &r[..])).unwrap();
        let a = ImplicitActivation::new(LossFamily::Squared, m).unwrap();
        let (_, v_star) = a.sigma_min();
        assert!((v_star - 3.0 * (1.0 / 3.0 - 1.0 / 9.0)).abs() < 1e-15);
        let p = a.sigma_inverse(v_star + 0.3).unwrap();
        assert!((p[0] - p[1]).abs() < 1e-15 && (p[1] - p[2]).abs() < 1e-15);
        assert!((a.sigma_eval(&p).unwrap() - v_star - 0.3).abs() < 1e-12);
    }

    #[test]
    fn per_example_inverse_examples() {
        let p = per_example_inverse(LossFamily::Squared, 0.3, 0.04).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert_eq!(
            per_example_inverse(LossFamily::Squared, 0.3, 0.0).unwrap(),
            0.3
        );
        assert!(per_example_inverse(LossFamily::Squared, 0.3, -0.1).is_err());
        assert!(per_example_inverse(LossFamily::BinaryCrossEntropy, 1.0, 0.0).is_err());
        assert!(per_example_inverse(LossFamily::BinaryCrossEntropy, 0.5, 0.1).is_err());
        let p = per_example_inverse(LossFamily::BinaryCrossEntropy, 0.0, 0.2).unwrap();
        let back = per_example_loss(LossFamily::BinaryCrossEntropy, &[p], &[0.0]).unwrap();
        assert!((back - 0.2).abs() < 1e-14);
    }

    #[test]
    fn offset_formula() {
        let sq = act(LossFamily::Squared, &[0.0, 1.0]);
        assert!((coverage_offset(&sq, 0.0, 1.0, 0.01) - 0.26).abs() < 1e-15);
        // Patterns already above v* + margin are pulled down to it; fine
        // because Im(σ) is a half-line.
        let c = coverage_offset(&sq, 0.5, 0.9, 0.01);
        assert!((0.5 + c - 0.26).abs() < 1e-15);
        assert!(sq.sigma_inverse(0.9 + c).is_ok());
    }

    #[test]
    fn heads_layout() {
        let h = Heads::new(1, 10).unwrap();
        assert_eq!(h.range(0), 0..10);
        let h = Heads::new(3, 3).unwrap();
        assert_eq!(h.ranges().collect::<Vec<_>>(), vec![0..1, 1..2, 2..3]);
        assert!(Heads::new(3, 4).is_err());
    }

    #[test]
    fn profile_csv_has_header() {
        let sq = act(LossFamily::Squared, &[0.0, 1.0]);
        let prof = sigma_profile(&sq, 0.0, 1.0, 5);
        assert_eq!(prof.len(), 5);
        let mut buf = Vec::new();
        write_sigma_profile_csv(&mut buf, &prof).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("p,sigma\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
