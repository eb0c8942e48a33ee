//! Self-checks bundled behind `losspaint verify`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::construction::{build_embedded_targets, build_independent_layout, q_eval, SliceSpec};
use crate::data::{synth_balanced_classification, toy_regression, Dataset};
use crate::losses::{
    label_moments, per_example_inverse, per_example_loss, per_example_offset, Heads,
    ImplicitActivation, LossFamily,
};
use crate::nn::{
    self, HiddenActivation, NetworkParams, NetworkSpec, Objective, OutputActivation, Sample,
};
use crate::patterns::{sample_uniform, Analytic, Pattern};
use crate::surface::evaluate_slice;
use crate::Result;

pub type SigmaInverseFn = fn(&ImplicitActivation, f64) -> Result<Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replacement for `σ⁻¹`, used to confirm the round-trip check can fail.
    pub sigma_inverse: SigmaInverseFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma_inverse: |act, v| act.sigma_inverse(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Worst observed error; `0` for bitwise checks that passed.
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, cases: usize, observed: f64, tolerance: f64) -> Self {
        Self {
            name,
            cases,
            observed,
            tolerance,
            passed: observed <= tolerance,
            detail: String::new(),
        }
    }

    fn failed(name: &'static str, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            cases: 0,
            observed: f64::INFINITY,
            tolerance,
            passed: false,
            detail,
        }
    }
}

fn capture(name: &'static str, tolerance: f64, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::failed(name, tolerance, e.to_string()))
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        capture("gradient-check", 1e-5, gradient_check(opts.seed)),
        capture("sigma-oracle", 1e-12, sigma_oracle(opts.seed)),
        capture(
            "sigma-roundtrip",
            1e-10,
            sigma_roundtrip(opts.seed, opts.sigma_inverse),
        ),
        capture(
            "per-example-roundtrip",
            1e-10,
            per_example_roundtrip(opts.seed),
        ),
        capture("target-identity", 1e-10, target_identity(opts.seed)),
        capture("input-independence", 0.0, input_independence(opts.seed)),
        capture("path-equivalence", 1e-12, path_equivalence(opts.seed)),
    ]
}

pub fn format_table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>12} {:>12}  result",
        "check", "cases", "observed", "tolerance"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>12.3e} {:>12.1e}  {}{}",
            r.name,
            r.cases,
            r.observed,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" },
            if r.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", r.detail)
            }
        );
    }
    s
}

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let depth = rng.gen_range(1..=3);
    NetworkSpec::new(
        rng.gen_range(1..=8),
        (0..depth).map(|_| rng.gen_range(1..=16)).collect(),
        rng.gen_range(1..=3),
        if rng.gen_bool(0.5) {
            HiddenActivation::Tanh
        } else {
            HiddenActivation::Relu
        },
        if rng.gen_bool(0.5) {
            OutputActivation::Identity
        } else {
            OutputActivation::Sigmoid
        },
    )
    .expect("valid random spec")
}

/// Error measure `|a − b| / max(1, |a|, |b|)`.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn gradient_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for n in 0..100 {
        let spec = random_spec(&mut rng);
        let mut params = nn::init_params(&spec, seed.wrapping_add(n));
        for b in params.iter_flat_mut() {
            *b += rng.gen_range(-0.1..0.1);
        }
        let objective = match spec.output_activation {
            OutputActivation::Identity => Objective::Squared,
            OutputActivation::Sigmoid => Objective::BinaryCrossEntropy,
        };
        let m = 3;
        let xs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..spec.input_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let ts: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..spec.output_dim)
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect()
            })
            .collect();
        let batch: Vec<Sample> = xs.iter().zip(&ts).map(|(x, t)| Sample::new(x, t)).collect();
        let (_, grad) = nn::gradient(&spec, &params, &batch, objective)?;
        let analytic = grad.to_flat();
        let base = params.to_flat();
        let mut probe = params.clone();
        let mut flat = base.clone();
        for i in 0..base.len() {
            flat[i] = base[i] + step;
            probe.set_flat(&flat)?;
            let plus = nn::gradient(&spec, &probe, &batch, objective)?.0;
            flat[i] = base[i] - step;
            probe.set_flat(&flat)?;
            let minus = nn::gradient(&spec, &probe, &batch, objective)?.0;
            flat[i] = base[i];
            worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * step)));
        }
    }
    Ok(CheckResult::new("gradient-check", 100, worst, 1e-5))
}

struct Case {
    family: LossFamily,
    labels: Vec<Vec<f64>>,
}

fn random_case(rng: &mut ChaCha8Rng, family: LossFamily) -> Case {
    let n = rng.gen_range(1..=20);
    let l = rng.gen_range(1..=3);
    let labels = (0..n)
        .map(|_| {
            (0..l)
                .map(|_| match family {
                    LossFamily::Squared => rng.gen_range(-2.0..2.0),
                    LossFamily::BinaryCrossEntropy => rng.gen_range(0..2) as f64,
                })
                .collect()
        })
        .collect();
    Case { family, labels }
}

fn activation(case: &Case) -> Result<ImplicitActivation> {
    ImplicitActivation::new(
        case.family,
        label_moments(case.labels.iter().map(|v| &v[..]))?,
    )
}

const FAMILIES: [LossFamily; 2] = [LossFamily::Squared, LossFamily::BinaryCrossEntropy];

fn sigma_oracle(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa2);
    let mut worst: f64 = 0.0;
    for family in FAMILIES {
        for _ in 0..1000 {
            let case = random_case(&mut rng, family);
            let act = activation(&case)?;
            let p: Vec<f64> = (0..act.channels())
                .map(|_| match family {
                    LossFamily::Squared => rng.gen_range(-3.0..3.0),
                    LossFamily::BinaryCrossEntropy => rng.gen_range(0.01..0.99),
                })
                .collect();
            let mut direct = 0.0;
            for y in &case.labels {
                direct += per_example_loss(family, &p, y)?;
            }
            direct /= case.labels.len() as f64;
            worst = worst.max((act.sigma_eval(&p)? - direct).abs());
        }
    }
    Ok(CheckResult::new("sigma-oracle", 2000, worst, 1e-12))
}

/// Largest total excess over `v*` whose pre-image keeps every channel's
/// prediction within `[0.01, 0.99]` for cross-entropy. Closer to 0 or 1 the
/// f64 spacing of `p` alone exceeds the round-trip tolerance.
fn excess_budget(act: &ImplicitActivation) -> Result<f64> {
    let mut per_channel = f64::INFINITY;
    for c in 0..act.channels() {
        let single = act.restrict(c..c + 1);
        let (_, v_star) = single.sigma_min();
        let m = act.moments.mean[c];
        let cap = match act.family {
            LossFamily::Squared => 3.0,
            LossFamily::BinaryCrossEntropy if m >= 1.0 => single.sigma_eval(&[0.01])? - v_star,
            LossFamily::BinaryCrossEntropy => single.sigma_eval(&[0.99])? - v_star,
        };
        per_channel = per_channel.min(cap);
    }
    Ok(per_channel * act.channels() as f64)
}

fn sigma_roundtrip(seed: u64, inverse: SigmaInverseFn) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa3);
    let mut worst: f64 = 0.0;
    for family in FAMILIES {
        for _ in 0..1000 {
            let act = activation(&random_case(&mut rng, family))?;
            let (_, v_star) = act.sigma_min();
            let v = v_star + rng.gen_range(0.0..=excess_budget(&act)?);
            let p = inverse(&act, v)?;
            worst = worst.max((act.sigma_eval(&p)? - v).abs());
        }
    }
    Ok(CheckResult::new("sigma-roundtrip", 2000, worst, 1e-10))
}

fn per_example_roundtrip(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa4);
    let mut worst: f64 = 0.0;
    for family in FAMILIES {
        for _ in 0..1000 {
            let y = match family {
                LossFamily::Squared => rng.gen_range(-2.0..2.0),
                LossFamily::BinaryCrossEntropy => rng.gen_range(0..2) as f64,
            };
            let v = rng.gen_range(1e-6..5.0);
            let t = per_example_inverse(family, y, v)?;
            worst = worst.max((per_example_loss(family, &[t], &[y])? - v).abs());
        }
    }
    Ok(CheckResult::new(
        "per-example-roundtrip",
        2000,
        worst,
        1e-10,
    ))
}

fn target_identity(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5);
    let pattern = Pattern::analytic(Analytic::Bimodal, 1)?;
    let c = per_example_offset(pattern.range(0).0, 1e-3);
    let cases: [(LossFamily, Dataset); 2] = [
        (LossFamily::Squared, toy_regression(64, seed)?),
        (
            LossFamily::BinaryCrossEntropy,
            synth_balanced_classification(3, 8, 2, seed)?,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (family, ds) in &cases {
        let heads = Heads::new(1, ds.target_dim())?;
        let hs = sample_uniform(&mut rng, 1, 500);
        let targets = build_embedded_targets(&pattern, &[c], *family, &heads, ds, &hs)?;
        for (s, h) in hs.iter().enumerate() {
            let block = &targets[s * ds.len()..(s + 1) * ds.len()];
            let mut mean = 0.0;
            for t in block {
                mean += per_example_loss(*family, &t.target, ds.target(t.index))?;
            }
            mean /= ds.len() as f64;
            worst = worst.max((mean - (pattern.eval(h)[0] + c)).abs());
        }
    }
    Ok(CheckResult::new("target-identity", 1000, worst, 1e-10))
}

fn independent_fixture(seed: u64) -> Result<(NetworkSpec, NetworkParams, Dataset)> {
    let spec = NetworkSpec::new(
        4,
        vec![6, 5],
        3,
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )?;
    let (params, _) = build_independent_layout(&spec, 2, seed)?;
    let ds = synth_balanced_classification(3, 5, 4, seed)?;
    Ok((spec, params, ds))
}

fn input_independence(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa6);
    let (spec, params, ds) = independent_fixture(seed)?;
    let slice = SliceSpec::axis_aligned(&spec, params, 2)?;
    let mut mismatches = 0usize;
    let mut cases = 0;
    for i in 0..5 {
        for j in 0..5 {
            let p = slice.point(&[i as f64 / 4.0, j as f64 / 4.0])?;
            let reference = nn::forward(&spec, &p, ds.input(0))?;
            for _ in 0..100 {
                let x: Vec<f64> = (0..spec.input_dim)
                    .map(|_| rng.gen_range(-10.0..10.0))
                    .collect();
                let out = nn::forward(&spec, &p, &x)?;
                cases += 1;
                if out
                    .iter()
                    .zip(&reference)
                    .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    mismatches += 1;
                }
            }
        }
    }
    let scrambled: Vec<f64> = (0..ds.len() * spec.input_dim)
        .map(|_| rng.gen_range(-10.0..10.0))
        .collect();
    let other = Dataset::new(
        "scrambled",
        ds.task,
        ds.input_dim(),
        ds.target_dim(),
        scrambled,
        ds.targets().flatten().copied().collect(),
    )?;
    let heads = Heads::new(1, 3)?;
    let a = evaluate_slice(&spec, &slice, &ds, LossFamily::Squared, &heads, &[5, 5])?;
    let b = evaluate_slice(&spec, &slice, &other, LossFamily::Squared, &heads, &[5, 5])?;
    mismatches += a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x.to_bits() != y.to_bits())
        .count();
    let mut r = CheckResult::new("input-independence", cases, mismatches as f64, 0.0);
    if mismatches > 0 {
        r.detail = format!("{mismatches} mismatching outputs or losses");
    }
    Ok(r)
}

fn path_equivalence(seed: u64) -> Result<CheckResult> {
    let (spec, params, ds) = independent_fixture(seed)?;
    let slice = SliceSpec::axis_aligned(&spec, params.clone(), 2)?;
    let act = ImplicitActivation::new(LossFamily::Squared, ds.moments())?;
    let heads = Heads::new(1, 3)?;
    let grid = evaluate_slice(&spec, &slice, &ds, LossFamily::Squared, &heads, &[7, 7])?;
    let mut worst: f64 = 0.0;
    for node in 0..grid.node_count() {
        let q = q_eval(&spec, &params, &grid.alpha(node))?;
        worst = worst.max((act.sigma_eval(&q)? - grid.value(node, 0)).abs());
    }
    Ok(CheckResult::new(
        "path-equivalence",
        grid.node_count(),
        worst,
        1e-12,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        for r in [
            sigma_oracle(1).unwrap(),
            per_example_roundtrip(1).unwrap(),
            target_identity(1).unwrap(),
            input_independence(1).unwrap(),
            path_equivalence(1).unwrap(),
        ] {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn broken_inverse_is_caught() {
        let r = sigma_roundtrip(0, |act, v| {
            let mut p = act.sigma_inverse(v)?;
            p[0] *= 0.999;
            Ok(p)
        })
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.name, "sigma-roundtrip");
    }

    #[test]
    fn table_lists_tolerances() {
        let t = format_table(&[CheckResult::new("x", 1, 0.5, 1e-3)]);
        assert!(t.contains("1.0e-3"));
        assert!(t.contains("FAIL"));
    }
}
