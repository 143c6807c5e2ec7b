mod oracle;

use coptidice::cmdp::{policy_values, random_cmdp, random_dense_cmdp, Cmdp, GenParams, TabularPolicy};
use coptidice::datagen::{
    build_data_policy, build_limited_policy, mix_datasets, read_dataset, sample_trajectories, write_dataset,
    EmpiricalDistribution, Weighting, MAX_EPISODE_LEN,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn generated_model(seed: u64) -> Cmdp {
    random_cmdp(seed, &GenParams::default()).unwrap()
}

#[test]
fn data_policies_hit_their_cost_targets() {
    for seed in 0..3 {
        let m = generated_model(seed);
        for target in [0.09, 0.11] {
            let pi = build_data_policy(&m, target).unwrap();
            let v = policy_values(&m, &pi).unwrap();
            assert!(v.cost_values[0] <= target + 1e-6, "seed {seed}: {}", v.cost_values[0]);
            assert!(v.cost_values[0] >= target - 0.01, "seed {seed}: {}", v.cost_values[0]);
        }
    }
}

#[test]
fn unconstrained_softening_reaches_the_mixture_level() {
    for seed in 0..3 {
        let m = generated_model(seed);
        let pi = build_data_policy(&m, f64::INFINITY).unwrap();
        let v = policy_values(&m, &pi).unwrap().reward_value;
        let best = oracle::value_iteration(&m, m.reward());
        let (unif, _) = oracle::truncated_series(&m, &TabularPolicy::uniform(50, 4), 1e-15);
        let level = 0.9 * best + 0.1 * unif;
        assert!((v - level).abs() <= 1e-4, "seed {seed}: {v} vs {level}");
    }
}

#[test]
fn limited_policies_stay_on_their_support() {
    let m = generated_model(3);
    let pi = build_limited_policy(&m, &[0, 1], 0.09).unwrap();
    for s in 0..50 {
        assert_eq!(pi.prob(s, 2), 0.0);
        assert_eq!(pi.prob(s, 3), 0.0);
        assert!((pi.prob(s, 0) + pi.prob(s, 1) - 1.0).abs() < 1e-12);
    }
    assert!(policy_values(&m, &pi).unwrap().cost_values[0] <= 0.09 + 1e-6);
    let only_first = build_limited_policy(&m, &[0], 0.09).unwrap();
    assert_eq!(policy_values(&m, &only_first).unwrap().cost_values[0], 0.0);
    assert!((0..50).all(|s| only_first.prob(s, 0) == 1.0));
}

/// Expected visits per `(s, a)` over episodes with the goal stop and the
/// length cap, normalized by the expected episode length.
fn truncated_occupancy(m: &Cmdp, pi: &TabularPolicy, max_len: usize) -> DMatrix<f64> {
    let (n, na) = (m.num_states(), m.num_actions());
    let mut alive = m.initial().to_vec();
    let mut visits = DMatrix::<f64>::zeros(n, na);
    for _ in 0..max_len {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for a in 0..na {
                let mass = alive[s] * pi.prob(s, a);
                visits[(s, a)] += mass;
                if m.reward()[(s, a)] == 0.0 {
                    for (t, p) in m.transition_row(s, a).iter().enumerate() {
                        next[t] += mass * p;
                    }
                }
            }
        }
        alive = next;
    }
    let total = visits.sum();
    visits / total
}

#[test]
fn sampled_frequencies_match_the_truncated_occupancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut m = random_dense_cmdp(&mut rng, 3, 2, 1, 0.95).unwrap();
    // a single rewarding pair acts as the goal
    let mut reward = DMatrix::zeros(3, 2);
    reward[(2, 1)] = 1.0;
    m = m.with_reward(reward).unwrap();
    let pi = oracle::random_policy(&mut rng, 3, 2, 0.2);
    let ds = sample_trajectories(&m, &pi, 100_000, 3, 10).unwrap();
    let dist = EmpiricalDistribution::from_dataset(&ds, 3, 2, 0.95, Weighting::Uniform).unwrap();
    let exact = truncated_occupancy(&m, &pi, 10);
    let records = ds.len() as f64;
    for s in 0..3 {
        for a in 0..2 {
            let p = exact[(s, a)];
            // records within an episode are correlated; the episode count
            // gives a conservative effective sample size
            let se = (p * (1.0 - p) / 100_000.0).sqrt() * (records / 100_000.0).sqrt();
            assert!((dist.sa_weight()[(s, a)] - p).abs() <= 3.0 * se, "({s}, {a}): {} vs {p}", dist.sa_weight()[(s, a)]);
        }
    }
}

#[test]
fn episodes_respect_the_protocol() {
    let m = generated_model(1);
    let pi = TabularPolicy::uniform(50, 4);
    let ds = sample_trajectories(&m, &pi, 10, 9, MAX_EPISODE_LEN).unwrap();
    assert!(ds.len() <= 500);
    for ep in ds.episodes() {
        for pair in ep.windows(2) {
            assert_eq!(pair[0].s_next, pair[1].s);
            assert_eq!(pair[0].r, 0.0);
        }
        assert!(ep.iter().all(|r| r.s0 == ep[0].s));
    }
    ds.check_against(&m).unwrap();
}

#[test]
fn mixtures_take_the_requested_shares() {
    let m = generated_model(2);
    let a = sample_trajectories(&m, &TabularPolicy::uniform(50, 4), 10, 1, 50).unwrap();
    let first = TabularPolicy::deterministic(&vec![0; 50], 4).unwrap();
    let b = sample_trajectories(&m, &first, 10, 2, 50).unwrap();
    for (beta, want) in [(1.0, 10), (0.0, 0), (0.8, 8)] {
        let mix = mix_datasets(&a, &b, beta, 10, 4).unwrap();
        assert_eq!(mix.num_episodes(), 10);
        // episodes of the deterministic source only ever use the first action
        let from_b = mix.episodes().filter(|e| e.iter().all(|r| r.a == 0)).count();
        let from_a = 10 - from_b;
        assert!(from_a <= want && from_b >= 10 - want, "beta {beta}: {from_a}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn datasets_round_trip_through_text(seed in 0u64..1000, episodes in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let m = random_dense_cmdp(&mut rng, n, 2, 2, 0.9).unwrap();
        let pi = oracle::random_policy(&mut rng, n, 2, 0.0);
        let ds = sample_trajectories(&m, &pi, episodes, seed, 7).unwrap();
        prop_assert_eq!(read_dataset(&write_dataset(&ds)).unwrap(), ds);
    }

    #[test]
    fn empirical_marginals_are_consistent(seed in 0u64..1000, discounted in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let m = random_dense_cmdp(&mut rng, n, 3, 1, 0.9).unwrap();
        let pi = oracle::random_policy(&mut rng, n, 3, 0.0);
        let ds = sample_trajectories(&m, &pi, 15, seed, 12).unwrap();
        let w = if discounted { Weighting::Discounted } else { Weighting::Uniform };
        let dist = EmpiricalDistribution::from_dataset(&ds, n, 3, 0.9, w).unwrap();
        prop_assert!((dist.sa_weight().sum() - 1.0).abs() <= 1e-12);
        prop_assert!((dist.init_weight().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for s in 0..n {
            for a in 0..3 {
                let sas: f64 = dist.sas_weight(s, a).iter().map(|x| x.1).sum();
                prop_assert!((sas - dist.sa_weight()[(s, a)]).abs() <= 1e-12);
                prop_assert_eq!(dist.count(s, a) > 0, dist.sa_weight()[(s, a)] > 0.0);
            }
        }
    }
}
