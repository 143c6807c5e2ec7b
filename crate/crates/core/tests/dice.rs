mod oracle;

use coptidice::cmdp::{random_dense_cmdp, Cmdp, TabularPolicy};
use coptidice::datagen::EmpiricalDistribution;
use coptidice::dice::{closed_form_w, dual_loss, optimize_naive, FDivergence, SolverConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small model, a full-support behavior policy and a threshold strictly
/// between the least cost on the support and the behavior cost.
fn instance(seed: u64, gamma: f64) -> (Cmdp, TabularPolicy, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=4);
    let na = rng.random_range(2..=3);
    let m = random_dense_cmdp(&mut rng, n, na, 1, gamma).unwrap();
    let pi = oracle::random_policy(&mut rng, n, na, 0.2);
    let v = coptidice::cmdp::policy_values(&m, &pi).unwrap();
    let least = coptidice::cmdp::min_cost_policy(&m, None).unwrap().values.cost_values[0];
    let u: f64 = rng.random_range(0.3..1.0);
    let threshold = least + u * (v.cost_values[0] - least);
    (m, pi, threshold)
}

#[test]
fn dual_optimum_matches_projected_gradient_primal() {
    for seed in 0..12 {
        let (m, pi, threshold) = instance(seed, 0.9);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        for alpha in [0.1, 1.0] {
            let cfg = SolverConfig {
                alpha,
                ..SolverConfig::default()
            };
            let dual = optimize_naive(&dist, &[threshold], &cfg).unwrap();
            let primal = oracle::projected_gradient_primal(&dist, &[threshold], alpha);
            assert!(
                (dual.loss_value - primal).abs() <= 1e-4,
                "seed {seed} alpha {alpha}: dual {} primal {primal}",
                dual.loss_value
            );
        }
    }
}

#[test]
fn closed_form_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let e: f64 = rng.random_range(-2.0..2.0);
        let alpha: f64 = rng.random_range(0.05..2.0);
        for fdiv in [FDivergence::ChiSquare, FDivergence::Kl] {
            let w = closed_form_w(e, alpha, fdiv, None);
            let g = oracle::grid_argmax(e, alpha, fdiv);
            assert!((w - g).abs() <= 1e-6 * (1.0 + w), "e {e} alpha {alpha} {fdiv:?}: {w} vs {g}");
        }
    }
}

#[test]
fn dual_gradient_matches_central_differences() {
    for seed in 0..10 {
        let (m, pi, threshold) = instance(100 + seed, 0.9);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m.num_states();
        let cfg = SolverConfig {
            alpha: 0.5,
            ..SolverConfig::default()
        };
        let x: Vec<f64> = (0..n + 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = {
            let mut x = x;
            x[n] = x[n].abs();
            x
        };
        let loss = |v: &[f64]| dual_loss(&dist, &[threshold], &cfg, &v[..n], &v[n..], None).unwrap().0;
        let (_, g_nu, g_l, _) = dual_loss(&dist, &[threshold], &cfg, &x[..n], &x[n..], None).unwrap();
        let analytic: Vec<f64> = g_nu.into_iter().chain(g_l).collect();
        let numeric: Vec<f64> = (0..n + 1).map(|i| oracle::central_diff(loss, &x, i, 1e-6)).collect();
        let err = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-5 * scale, "seed {seed}: {analytic:?} vs {numeric:?}");
    }
}

#[test]
fn undiscounted_weights_are_normalized() {
    for seed in 0..5 {
        let (m, pi, threshold) = instance(200 + seed, 1.0);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        let sol = optimize_naive(&dist, &[threshold], &SolverConfig::default()).unwrap();
        let total = dist.sa_weight().component_mul(&sol.w).sum();
        assert!((total - 1.0).abs() <= 1e-6, "seed {seed}: {total}");
    }
}

#[test]
fn larger_alpha_stays_closer_to_the_data() {
    // strong regularization pulls every weight towards one
    let (m, pi, threshold) = instance(300, 0.9);
    let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
    let spread = |alpha: f64| {
        let cfg = SolverConfig {
            alpha,
            ..SolverConfig::default()
        };
        let sol = optimize_naive(&dist, &[threshold], &cfg).unwrap();
        sol.w.map(|w| (w - 1.0).abs()).max()
    };
    assert!(spread(100.0) < spread(0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dual_loss_is_midpoint_convex(seed in 0u64..1000, t in 0.0f64..1.0) {
        let (m, pi, threshold) = instance(seed, 0.9);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        let cfg = SolverConfig { alpha: 0.3, ..SolverConfig::default() };
        let n = m.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let mut draw = || -> Vec<f64> { (0..=n).map(|i| if i == n { rng.random_range(0.0..3.0) } else { rng.random_range(-2.0..2.0) }).collect() };
        let (a, b) = (draw(), draw());
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let f = |v: &[f64]| dual_loss(&dist, &[threshold], &cfg, &v[..n], &v[n..], None).unwrap().0;
        prop_assert!(f(&mid) <= t * f(&a) + (1.0 - t) * f(&b) + 1e-12);
    }

    #[test]
    fn closed_form_is_nonnegative_and_monotone(e in -5.0f64..5.0, d in 0.0f64..1.0, alpha in 0.01f64..3.0) {
        for fdiv in [FDivergence::ChiSquare, FDivergence::Kl] {
            let lo = closed_form_w(e, alpha, fdiv, None);
            let hi = closed_form_w(e + d, alpha, fdiv, None);
            prop_assert!(lo >= 0.0 && hi >= lo);
        }
    }
}
