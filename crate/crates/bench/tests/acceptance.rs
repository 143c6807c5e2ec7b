//! Acceptance suite.  Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use coptidice::bound::{ope_dice, optimize_ub_for, perturbed_weights, ub_loss};
use coptidice::cmdp::{min_cost_policy, policy_values, random_cmdp, random_dense_cmdp, Cmdp, GenParams, TabularPolicy};
use coptidice::datagen::{sample_trajectories, DataPolicySpec, EmpiricalDistribution, Weighting};
use coptidice::dice::{closed_form_w, dual_loss, optimize_naive, FDivergence, FallbackRule, SolverConfig};
use coptidice_bench::config::ExperimentConfig;
use coptidice_bench::experiment::run_experiment;
use coptidice_bench::results::{aggregate, SummaryRow};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C_HAT: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Small model with a full-support behavior policy and a threshold strictly
/// between the least achievable cost and the behavior cost.
fn instance(seed: u64, gamma: f64) -> (Cmdp, TabularPolicy, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=4);
    let na = rng.random_range(2..=3);
    let m = random_dense_cmdp(&mut rng, n, na, 1, gamma).unwrap();
    let pi = oracle::random_policy(&mut rng, n, na, 0.2);
    let v = policy_values(&m, &pi).unwrap();
    let least = min_cost_policy(&m, None).unwrap().values.cost_values[0];
    let u: f64 = rng.random_range(0.3..1.0);
    (m, pi, least + u * (v.cost_values[0] - least))
}

fn duality() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (m, pi, threshold) = instance(1000 + seed, 0.9);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        for alpha in [0.1, 1.0] {
            let cfg = SolverConfig {
                alpha,
                ..SolverConfig::default()
            };
            let dual = match optimize_naive(&dist, &[threshold], &cfg) {
                Ok(d) => d.loss_value,
                Err(e) => return outcome(false, format!("seed {seed}: {e}")),
            };
            let primal = oracle::projected_gradient_primal(&dist, &[threshold], alpha);
            worst = worst.max((dual - primal).abs());
        }
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-4 && took <= Duration::from_secs(120),
        format!("max |dual - primal| = {worst:.2e} over 100 solves in {:.1}s", took.as_secs_f64()),
    )
}

fn kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let e: f64 = rng.random_range(-3.0..3.0);
        let alpha: f64 = rng.random_range(0.02..3.0);
        for fdiv in [FDivergence::ChiSquare, FDivergence::Kl] {
            let w = closed_form_w(e, alpha, fdiv, None);
            let g = oracle::grid_argmax(e, alpha, fdiv);
            worst = worst.max((w - g).abs() / (1.0 + w));
        }
    }
    outcome(worst <= 1e-6, format!("max |w - grid| / (1 + w) = {worst:.2e} on 10^4 pairs"))
}

/// Normwise relative error `max|fd - g| / max|g|`.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let err = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
    err / scale.max(f64::MIN_POSITIVE)
}

/// Sampled data on a small generated model plus frozen weights.
fn frozen(seed: u64, episodes: usize) -> (EmpiricalDistribution, DMatrix<f64>) {
    let params = GenParams {
        num_states: 8,
        num_actions: 3,
        ..GenParams::default()
    };
    let m = random_cmdp(seed, &params).unwrap();
    let ds = sample_trajectories(&m, &TabularPolicy::uniform(8, 3), episodes, seed + 1, 50).unwrap();
    let dist = EmpiricalDistribution::from_dataset(&ds, 8, 3, m.discount(), Weighting::Uniform).unwrap();
    let w = optimize_naive(&dist, m.thresholds(), &SolverConfig::for_episodes(episodes)).unwrap().w;
    (dist, w)
}

fn gradients() -> Outcome {
    let mut worst_dual = 0.0f64;
    let mut worst_ub = 0.0f64;
    for seed in 0..50 {
        let (m, pi, threshold) = instance(2000 + seed, 0.9);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        let n = m.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SolverConfig {
            alpha: rng.random_range(0.1..1.0),
            ..SolverConfig::default()
        };
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        x.push(rng.random_range(0.0..2.0));
        let loss = |v: &[f64]| dual_loss(&dist, &[threshold], &cfg, &v[..n], &v[n..], None).unwrap().0;
        let (_, g_nu, g_l, _) = dual_loss(&dist, &[threshold], &cfg, &x[..n], &x[n..], None).unwrap();
        let analytic: Vec<f64> = g_nu.into_iter().chain(g_l).collect();
        let numeric: Vec<f64> = (0..=n).map(|i| oracle::central_diff(loss, &x, i, 1e-6)).collect();
        worst_dual = worst_dual.max(relative_error(&analytic, &numeric));

        let (dist, w) = frozen(seed, 15);
        let n = dist.num_states();
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        x.push(rng.random_range(0.2..2.0));
        let cost = &dist.costs()[0];
        let f = |v: &[f64]| ub_loss(v[n], &v[..n], &w, cost, &dist, 0.02).unwrap().0;
        let (_, g_tau, g_chi) = ub_loss(x[n], &x[..n], &w, cost, &dist, 0.02).unwrap();
        let analytic: Vec<f64> = g_chi.into_iter().chain([g_tau]).collect();
        let numeric: Vec<f64> = (0..=n).map(|i| oracle::central_diff(f, &x, i, 1e-6)).collect();
        worst_ub = worst_ub.max(relative_error(&analytic, &numeric));
    }
    outcome(
        worst_dual <= 1e-5 && worst_ub <= 1e-5,
        format!("max relative error dual {worst_dual:.2e}, bound {worst_ub:.2e} over 50 seeds each"),
    )
}

fn bound_identities() -> Outcome {
    let (mut a, mut b, mut c, mut d) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for seed in 0..20 {
        let (dist, w) = frozen(100 + seed, 30);
        let cost = &dist.costs()[0];
        let mut last = f64::NEG_INFINITY;
        for eps in [0.0, 0.001, 0.01, 0.1] {
            let cfg = SolverConfig {
                epsilon: eps,
                ..SolverConfig::default()
            };
            let ub = match optimize_ub_for(&w, cost, &dist, &cfg, None) {
                Ok(u) => u,
                Err(e) => return outcome(false, format!("seed {seed} eps {eps}: {e}")),
            };
            if eps == 0.0 {
                a = a.max((ub.ub_value - ope_dice(&w, &dist, cost)).abs());
            } else {
                let p = perturbed_weights(ub.tau, &ub.chi, &w, cost, &dist).unwrap();
                c = c.max((ub.ub_value - p.reweighted).abs());
                d = d.max(p.kl - eps);
            }
            b = b.max(last - ub.ub_value);
            last = ub.ub_value;
        }
    }
    outcome(
        a <= 1e-6 && b <= 0.0 && c <= 1e-4 && d <= 1e-4,
        format!("(a) {a:.2e} (b) worst decrease {:.2e} (c) {c:.2e} (d) KL - eps {d:.2e}", b.max(0.0)),
    )
}

fn normalization() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (m, pi, threshold) = instance(3000 + seed, 1.0);
        let dist = EmpiricalDistribution::exact(&m, &pi).unwrap();
        match optimize_naive(&dist, &[threshold], &SolverConfig::default()) {
            Ok(sol) => worst = worst.max((dist.sa_weight().component_mul(&sol.w).sum() - 1.0).abs()),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    outcome(worst <= 1e-6, format!("max |sum d^D w - 1| = {worst:.2e} on 20 instances"))
}

fn sweep(runs: usize, spec: DataPolicySpec, fallback: FallbackRule) -> Result<Vec<SummaryRow>, String> {
    let cfg = ExperimentConfig {
        runs,
        trajectories: vec![10, 100, 1000],
        thresholds: vec![C_HAT],
        data_policy: spec,
        fallback,
        parallelism: 0,
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let summary = aggregate(&rows);
    if let Some(bad) = summary.iter().find(|s| s.failed > 0) {
        return Err(format!("{} failed cells for {} at N={}", bad.failed, bad.algorithm, bad.n_trajectories));
    }
    Ok(summary)
}

fn cell<'a>(summary: &'a [SummaryRow], alg: &str, n: usize) -> &'a SummaryRow {
    summary.iter().find(|s| s.algorithm == alg && s.n_trajectories == n).unwrap()
}

fn mean_cost(summary: &[SummaryRow], alg: &str, n: usize) -> f64 {
    cell(summary, alg, n).cost.map_or(f64::NAN, |s| s.mean)
}

fn mean_reward(summary: &[SummaryRow], alg: &str, n: usize) -> f64 {
    cell(summary, alg, n).normalized_reward.map_or(f64::NAN, |s| s.mean)
}

fn random_cmdp_trends() -> Outcome {
    let start = Instant::now();
    let sat = match sweep(200, DataPolicySpec::full_support(0.09), FallbackRule::Uniform) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let vio = match sweep(200, DataPolicySpec::full_support(0.11), FallbackRule::Uniform) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let ns = [10, 100, 1000];
    let a_cost: Vec<f64> = ns.iter().map(|&n| mean_cost(&sat, "coptidice", n)).collect();
    let a_base = mean_cost(&sat, "baseline", 10);
    let pass_a = a_cost.iter().all(|c| *c <= C_HAT + 0.01) && a_base > C_HAT;
    let b_over: Vec<f64> = ["bc", "baseline", "coptidice-naive"].iter().map(|a| mean_cost(&vio, a, 1000)).collect();
    let b_cop = mean_cost(&vio, "coptidice", 1000);
    let pass_b = b_over.iter().all(|c| *c > C_HAT) && b_cop <= C_HAT + 0.02;
    let (c_cop, c_bc) = (mean_reward(&sat, "coptidice", 1000), mean_reward(&sat, "bc", 1000));
    let pass_c = c_cop > 0.0 && c_cop >= c_bc;
    let took = start.elapsed();
    outcome(
        pass_a && pass_b && pass_c && took <= Duration::from_secs(1800),
        format!(
            "(a) coptidice cost {a_cost:.4?}, baseline@10 {a_base:.4}; (b) bc/baseline/naive@1000 {b_over:.4?}, \
             coptidice@1000 {b_cop:.4}; (c) reward coptidice {c_cop:.4} bc {c_bc:.4}; {:.0}s",
            took.as_secs_f64()
        ),
    )
}

fn mixtures() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for beta in [0.8, 0.2] {
        let spec = DataPolicySpec::mixture(DataPolicySpec::full_support(0.09), DataPolicySpec::full_support(0.11), beta);
        let summary = match sweep(100, spec, FallbackRule::Uniform) {
            Ok(s) => s,
            Err(e) => return outcome(false, e),
        };
        let cop: Vec<f64> = [10, 100, 1000].iter().map(|&n| mean_cost(&summary, "coptidice", n)).collect();
        pass &= cop.iter().all(|c| *c <= C_HAT + 0.02);
        let mut line = format!("beta {beta}: coptidice {cop:.4?}");
        if beta == 0.2 {
            let base: Vec<f64> = ["bc", "baseline", "c-spibb"].iter().map(|a| mean_cost(&summary, a, 1000)).collect();
            pass &= base.iter().all(|c| *c > C_HAT);
            line += &format!(", bc/baseline/c-spibb@1000 {base:.4?}");
        }
        detail.push(line);
    }
    outcome(pass, detail.join("; "))
}

fn limited_support() -> Outcome {
    let summary = match sweep(100, DataPolicySpec::limited(vec![0], 0.09), FallbackRule::ActionMarginal) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let worst_reward = summary
        .iter()
        .filter_map(|s| s.normalized_reward.map(|r| r.mean.abs()))
        .fold(0.0, f64::max);
    let worst_cost = summary.iter().filter_map(|s| s.cost.map(|c| c.mean.abs())).fold(0.0, f64::max);
    let defined = summary.iter().all(|s| s.normalized_reward.is_some());
    outcome(
        defined && worst_reward <= 0.05 && worst_cost <= 1e-6,
        format!("max |mean normalized reward| {worst_reward:.2e}, max mean cost {worst_cost:.2e}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, par) in ["1", "4", "1"].iter().enumerate() {
        let path = dir.path().join(format!("r{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_coptidice"))
            .args(["bench", "--runs", "12", "--trajectories", "10,100", "--seed", "7", "--parallelism", par])
            .arg("--out")
            .arg(&path)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("bench exited with {status}"));
        }
        outputs.push(std::fs::read(&path).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("{} bytes, parallelism 1, 4, 1", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("duality", duality),
        ("closed form", kkt),
        ("gradients", gradients),
        ("bound identities", bound_identities),
        ("undiscounted normalization", normalization),
        ("random-CMDP trends", random_cmdp_trends),
        ("mixture data", mixtures),
        ("limited support", limited_support),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} ({name}): {} {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
