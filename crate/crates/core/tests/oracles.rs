//! Library behaviour checked against independent reference computations.

mod common;

use common::{oracle_forward, oracle_objective};

use losspaint::data::{split_matched_marginals, synth_balanced_classification};
use losspaint::losses::{
    label_moments, per_example_inverse, per_example_inverse_split, per_example_loss,
    ImplicitActivation, LossFamily,
};
use losspaint::nn::{
    self, init_params, read_checkpoint, write_checkpoint, Algorithm, HiddenActivation,
    NetworkParams, NetworkSpec, Objective, OptimizerState, OutputActivation, Sample,
};
use losspaint::patterns::{lattice_points, GridData, Pattern};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64, relu: bool) -> (NetworkSpec, NetworkParams, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=8);
    let widths: Vec<usize> = (0..rng.gen_range(1..=3))
        .map(|_| rng.gen_range(1..=16))
        .collect();
    let l = rng.gen_range(1..=4);
    let act = if relu {
        HiddenActivation::Relu
    } else {
        HiddenActivation::Tanh
    };
    let spec = NetworkSpec::new(d, widths, l, act, OutputActivation::Identity).unwrap();
    let mut params = init_params(&spec, seed);
    for v in params.iter_flat_mut() {
        *v += rng.gen_range(-0.1..0.1);
    }
    let n = rng.gen_range(1..=5);
    let xs = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ts = (0..n)
        .map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (spec, params, xs, ts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_oracle(seed in 0u64..10_000, relu in any::<bool>(), sigmoid in any::<bool>()) {
        let (mut spec, params, xs, _) = random_net(seed, relu);
        if sigmoid {
            spec.output_activation = OutputActivation::Sigmoid;
        }
        let shift: Vec<f64> = (0..spec.first_width()).map(|i| 0.1 * i as f64).collect();
        for x in &xs {
            let got = nn::forward_shifted(&spec, &params, x, &shift).unwrap();
            let want = oracle_forward(&spec, &params, x, &shift);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..10_000) {
        // Tanh only: relu kinks make finite differences unreliable.
        let (spec, params, xs, ts) = random_net(seed, false);
        let batch: Vec<Sample> = xs.iter().zip(&ts).map(|(x, t)| Sample::new(x, t)).collect();
        let (loss, grad) = nn::gradient(&spec, &params, &batch, Objective::Squared).unwrap();
        prop_assert!((loss - oracle_objective(&spec, &params, &xs, &ts)).abs() < 1e-12);
        let flat = params.to_flat();
        let step = 1e-5;
        for (k, g) in grad.to_flat().into_iter().enumerate() {
            let mut p = params.clone();
            let mut v = flat.clone();
            v[k] += step;
            p.set_flat(&v).unwrap();
            let up = oracle_objective(&spec, &p, &xs, &ts);
            v[k] -= 2.0 * step;
            p.set_flat(&v).unwrap();
            let down = oracle_objective(&spec, &p, &xs, &ts);
            let fd = (up - down) / (2.0 * step);
            let rel = (g - fd).abs() / 1f64.max(g.abs()).max(fd.abs());
            prop_assert!(rel <= 1e-5, "param {k}: {g} vs {fd}");
        }
    }

    #[test]
    fn sigma_is_the_direct_average(
        labels in prop::collection::vec(0u8..2, 1..60),
        p in 0.001f64..0.999,
        bce in any::<bool>(),
    ) {
        let ys: Vec<Vec<f64>> = labels.iter().map(|&b| vec![b as f64]).collect();
        let family = if bce { LossFamily::BinaryCrossEntropy } else { LossFamily::Squared };
        let act = ImplicitActivation::new(family, label_moments(ys.iter().map(|y| y.as_slice())).unwrap()).unwrap();
        let direct = ys.iter().map(|y| per_example_loss(family, &[p], y).unwrap()).sum::<f64>() / ys.len() as f64;
        prop_assert!((act.sigma_eval(&[p]).unwrap() - direct).abs() <= 1e-12);
    }

    #[test]
    fn sigma_inverse_is_the_upper_preimage(
        mean in 0.05f64..0.95,
        excess in 0.0f64..0.5,
        channels in 1usize..4,
    ) {
        let ys: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![if (i as f64) < mean * 100.0 { 1.0 } else { 0.0 }; channels])
            .collect();
        let act = ImplicitActivation::new(
            LossFamily::Squared,
            label_moments(ys.iter().map(|y| y.as_slice())).unwrap(),
        )
        .unwrap();
        let (p_star, v_star) = act.sigma_min();
        let v = v_star + excess;
        let p = act.sigma_inverse(v).unwrap();
        prop_assert!((act.sigma_eval(&p).unwrap() - v).abs() <= 1e-10);
        for (p, s) in p.iter().zip(&p_star) {
            prop_assert!(p >= s);
        }
    }

    #[test]
    fn per_example_inverse_round_trips(y in prop::sample::select(vec![0.0, 1.0]), v in 0.01f64..4.0, bce in any::<bool>()) {
        let family = if bce { LossFamily::BinaryCrossEntropy } else { LossFamily::Squared };
        let p = per_example_inverse(family, y, v).unwrap();
        prop_assert!((per_example_loss(family, &[p], &[y]).unwrap() - v).abs() <= 1e-10);
    }

    #[test]
    fn split_inverse_sums_back(ys in prop::collection::vec(-2.0f64..2.0, 1..5), v in 0.0f64..3.0) {
        let p = per_example_inverse_split(LossFamily::Squared, &ys, v).unwrap();
        prop_assert!((per_example_loss(LossFamily::Squared, &p, &ys).unwrap() - v).abs() <= 1e-12);
    }

    #[test]
    fn bilinear_pattern_matches_hand_formula(
        values in prop::collection::vec(0.0f64..1.0, 12),
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
    ) {
        // 4 x 3 grid, axis 0 fastest.
        let pattern = Pattern::grid(GridData::new(vec![4, 3], 1, values.clone()).unwrap());
        let (tx, ty) = (u * 3.0, v * 2.0);
        let (i, j) = ((tx.floor() as usize).min(2), (ty.floor() as usize).min(1));
        let (fx, fy) = (tx - i as f64, ty - j as f64);
        let at = |i: usize, j: usize| values[j * 4 + i];
        let want = (1.0 - fx) * (1.0 - fy) * at(i, j)
            + fx * (1.0 - fy) * at(i + 1, j)
            + (1.0 - fx) * fy * at(i, j + 1)
            + fx * fy * at(i + 1, j + 1);
        prop_assert!((pattern.eval(&[u, v])[0] - want).abs() <= 1e-12);
    }
}

#[test]
fn duplicated_batch_entry_keeps_the_gradient() {
    let (spec, params, xs, ts) = random_net(7, false);
    let single = [Sample::new(&xs[0], &ts[0])];
    let double = [single[0], single[0]];
    let (l1, g1) = nn::gradient(&spec, &params, &single, Objective::Squared).unwrap();
    let (l2, g2) = nn::gradient(&spec, &params, &double, Objective::Squared).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn sgd_step_example() {
    let spec = NetworkSpec::new(
        1,
        vec![1],
        1,
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap();
    let mut params = NetworkParams::zeros(&spec);
    params.set_flat(&vec![1.0; spec.param_count()]).unwrap();
    let mut grad = NetworkParams::zeros(&spec);
    grad.set_flat(&vec![2.0; spec.param_count()]).unwrap();
    let mut opt = OptimizerState::new(Algorithm::Sgd, 0.1, &spec).unwrap();
    opt.step(&mut params, &grad).unwrap();
    assert!(params.iter_flat().all(|&p| (p - 0.8).abs() < 1e-15));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (spec, params, _, _) = random_net(11, true);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &spec, &params).unwrap();
    let (spec2, params2) = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(spec2, spec);
    let bits = |p: &NetworkParams| p.iter_flat().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&params2), bits(&params));
}

#[test]
fn stratified_split_keeps_marginals() {
    let ds = synth_balanced_classification(10, 50, 4, 3).unwrap();
    let (a, b) = split_matched_marginals(&ds, 0.5, 9).unwrap();
    assert_eq!(a.len() + b.len(), ds.len());
    assert!(a.moments().max_abs_difference(&b.moments()) < 1e-15);
}

#[test]
fn lattice_runs_axis_zero_fastest() {
    let pts = lattice_points(&[3, 2]);
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[1], vec![0.5, 0.0]);
    assert_eq!(pts[3], vec![0.0, 1.0]);
    assert_eq!(pts[5], vec![1.0, 1.0]);
}
