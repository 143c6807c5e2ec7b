//! The benchmark sweep: runs x trajectory counts x thresholds x algorithms.

use std::time::Instant;

use coptidice::baselines::{behavior_cloning, c_spibb, mle_baseline, SpibbConfig};
use coptidice::cmdp::{
    normalized_reward, policy_values, random_cmdp, solve_cmdp, Cmdp, PolicyValues, TabularPolicy, COST_TOL,
};
use coptidice::datagen::{
    mix_datasets, sample_trajectories, DataPolicySpec, EmpiricalDistribution, TransitionDataset, MAX_EPISODE_LEN,
};
use coptidice::dice::{extract_policy, optimize_conservative, optimize_naive, DualSolution, FallbackRule};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig, SolverSettings};
use crate::error::Result;

/// Independent 64-bit seed for `(run, salt)` under `master`.
pub fn derive_seed(master: u64, run: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run);
    rng.set_word_pos(u128::from(salt) * 2);
    rng.next_u64()
}

const SALT_CMDP: u64 = 0;

fn salt_dataset(n: usize, side: u64) -> u64 {
    1 + 3 * n as u64 + side
}

/// One cell of the sweep.  True values come from exact evaluation on the
/// generating model; `normalized_reward` is `None` for degenerate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: usize,
    pub cmdp_seed: u64,
    pub algorithm: String,
    pub n_trajectories: usize,
    pub threshold: f64,
    pub data_policy: String,
    pub data_reward: f64,
    pub data_cost: f64,
    pub optimal_reward: f64,
    pub reward: f64,
    pub normalized_reward: Option<f64>,
    pub cost: f64,
    pub satisfied: bool,
    pub converged: bool,
    pub iterations: usize,
    pub lambda: Option<f64>,
    pub cost_bound: Option<f64>,
    pub error: String,
    pub wall_ms: Option<f64>,
}

/// Output of one offline algorithm on one dataset.
#[derive(Debug, Clone)]
pub struct AlgorithmOutput {
    pub policy: TabularPolicy,
    pub converged: bool,
    pub iterations: usize,
    pub lambda: Option<f64>,
    pub cost_bound: Option<f64>,
    pub dual: Option<DualSolution>,
}

impl AlgorithmOutput {
    fn plain(policy: TabularPolicy) -> Self {
        Self {
            policy,
            converged: true,
            iterations: 0,
            lambda: None,
            cost_bound: None,
            dual: None,
        }
    }
}

/// Runs `algorithm` on `dist` for a dataset of `n` trajectories.
pub fn solve_algorithm(
    algorithm: Algorithm,
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    n: usize,
    settings: &SolverSettings,
    fallback: FallbackRule,
) -> Result<AlgorithmOutput> {
    let cfg = settings.for_episodes(n);
    Ok(match algorithm {
        Algorithm::Bc => AlgorithmOutput::plain(behavior_cloning(dist, fallback)?),
        Algorithm::Baseline => AlgorithmOutput::plain(mle_baseline(dist, thresholds, fallback)?),
        Algorithm::CSpibb => {
            let spibb = SpibbConfig {
                n_wedge: settings.n_wedge,
                ..SpibbConfig::default()
            };
            AlgorithmOutput::plain(c_spibb(dist, thresholds, &spibb, fallback)?)
        }
        Algorithm::CoptidiceNaive => {
            let sol = optimize_naive(dist, thresholds, &cfg)?;
            AlgorithmOutput {
                policy: extract_policy(&sol.w, dist, fallback)?,
                converged: sol.diagnostics.converged,
                iterations: sol.diagnostics.iterations,
                lambda: sol.lambda.first().copied(),
                cost_bound: None,
                dual: Some(sol),
            }
        }
        Algorithm::Coptidice => {
            let (sol, ubs) = optimize_conservative(dist, thresholds, &cfg)?;
            AlgorithmOutput {
                policy: extract_policy(&sol.w, dist, fallback)?,
                converged: sol.diagnostics.converged,
                iterations: sol.diagnostics.iterations,
                lambda: sol.lambda.first().copied(),
                cost_bound: ubs.first().map(|u| u.ub_value),
                dual: Some(sol),
            }
        }
    })
}

/// Logging policies built from a [`DataPolicySpec`] on one model.
#[derive(Debug, Clone)]
pub enum DataPolicies {
    Single(TabularPolicy),
    Mixture(TabularPolicy, TabularPolicy, f64),
}

impl DataPolicies {
    pub fn build(cmdp: &Cmdp, spec: &DataPolicySpec) -> Result<Self> {
        Ok(match &spec.mixture {
            None => DataPolicies::Single(spec.build(cmdp)?),
            Some(m) => DataPolicies::Mixture(m.first.build(cmdp)?, m.second.build(cmdp)?, m.beta),
        })
    }

    /// True values of the data; a trajectory mixture has the mixed value of
    /// its components.
    pub fn values(&self, cmdp: &Cmdp) -> Result<PolicyValues> {
        Ok(match self {
            DataPolicies::Single(p) => policy_values(cmdp, p)?,
            DataPolicies::Mixture(p1, p2, beta) => {
                let (v1, v2) = (policy_values(cmdp, p1)?, policy_values(cmdp, p2)?);
                let mix = |a: f64, b: f64| beta * a + (1.0 - beta) * b;
                PolicyValues {
                    reward_value: mix(v1.reward_value, v2.reward_value),
                    cost_values: v1.cost_values.iter().zip(&v2.cost_values).map(|(a, b)| mix(*a, *b)).collect(),
                }
            }
        })
    }

    /// `n` episodes; `seed(side)` gives the stream of each sampling step.
    pub fn sample(&self, cmdp: &Cmdp, n: usize, seed: impl Fn(u64) -> u64) -> Result<TransitionDataset> {
        Ok(match self {
            DataPolicies::Single(p) => sample_trajectories(cmdp, p, n, seed(0), MAX_EPISODE_LEN)?,
            DataPolicies::Mixture(p1, p2, beta) => {
                let d1 = sample_trajectories(cmdp, p1, n, seed(0), MAX_EPISODE_LEN)?;
                let d2 = sample_trajectories(cmdp, p2, n, seed(1), MAX_EPISODE_LEN)?;
                mix_datasets(&d1, &d2, *beta, n, seed(2))?
            }
        })
    }
}

/// What every row of a run shares.
struct RunContext {
    cmdp: Cmdp,
    seed: u64,
    label: String,
    data: DataPolicies,
    data_values: PolicyValues,
}

fn prepare_run(cfg: &ExperimentConfig, seed: u64) -> Result<RunContext> {
    let cmdp = random_cmdp(seed, &cfg.generator)?;
    let data = DataPolicies::build(&cmdp, &cfg.data_policy)?;
    let data_values = data.values(&cmdp)?;
    Ok(RunContext {
        cmdp,
        seed,
        label: cfg.data_policy.label(),
        data,
        data_values,
    })
}

fn dataset_for(cfg: &ExperimentConfig, run: usize, ctx: &RunContext, n: usize) -> Result<TransitionDataset> {
    let mut ds = ctx
        .data
        .sample(&ctx.cmdp, n, |side| derive_seed(cfg.master_seed, run as u64, salt_dataset(n, side)))?;
    ds.meta.cmdp_seed = Some(ctx.seed);
    ds.meta.policy = ctx.label.clone();
    Ok(ds)
}

fn error_row(run: usize, seed: u64, cfg: &ExperimentConfig, alg: Algorithm, n: usize, threshold: f64, err: String) -> ResultRow {
    ResultRow {
        run_id: run,
        cmdp_seed: seed,
        algorithm: alg.name().to_string(),
        n_trajectories: n,
        threshold,
        data_policy: cfg.data_policy.label(),
        data_reward: f64::NAN,
        data_cost: f64::NAN,
        optimal_reward: f64::NAN,
        reward: f64::NAN,
        normalized_reward: None,
        cost: f64::NAN,
        satisfied: false,
        converged: false,
        iterations: 0,
        lambda: None,
        cost_bound: None,
        error: err,
        wall_ms: None,
    }
}

/// Rows of one run in sweep order: trajectory count, then threshold, then
/// algorithm.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Vec<ResultRow> {
    let seed = derive_seed(cfg.master_seed, run as u64, SALT_CMDP);
    let cells = || {
        cfg.trajectories.iter().flat_map(|&n| {
            cfg.thresholds
                .iter()
                .flat_map(move |&t| cfg.algorithms.iter().map(move |&a| (n, t, a)))
        })
    };
    let ctx = match prepare_run(cfg, seed) {
        Ok(ctx) => ctx,
        Err(e) => {
            return cells()
                .map(|(n, t, a)| error_row(run, seed, cfg, a, n, t, format!("setup: {e}")))
                .collect()
        }
    };
    let mut rows = Vec::new();
    for &n in &cfg.trajectories {
        let dist = dataset_for(cfg, run, &ctx, n).and_then(|ds| {
            let g = &cfg.generator;
            Ok(EmpiricalDistribution::from_dataset(&ds, g.num_states, g.num_actions, ctx.cmdp.discount(), cfg.weighting)?)
        });
        for &threshold in &cfg.thresholds {
            let thresholds = vec![threshold; ctx.cmdp.num_costs()];
            let optimum = ctx
                .cmdp
                .with_thresholds(thresholds.clone())
                .and_then(|m| solve_cmdp(&m));
            for &alg in &cfg.algorithms {
                let mut row = error_row(run, seed, cfg, alg, n, threshold, String::new());
                row.data_reward = ctx.data_values.reward_value;
                row.data_cost = ctx.data_values.cost_values[0];
                let (dist, optimum) = match (&dist, &optimum) {
                    (Ok(d), Ok(o)) => (d, o),
                    (Err(e), _) => {
                        row.error = format!("data: {e}");
                        rows.push(row);
                        continue;
                    }
                    (_, Err(e)) => {
                        row.error = format!("optimum: {e}");
                        rows.push(row);
                        continue;
                    }
                };
                row.optimal_reward = optimum.1.reward_value;
                let start = Instant::now();
                let out = solve_algorithm(alg, dist, &thresholds, n, &cfg.solver, cfg.fallback);
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                match out.and_then(|o| Ok((policy_values(&ctx.cmdp, &o.policy)?, o))) {
                    Ok((values, o)) => {
                        row.reward = values.reward_value;
                        row.cost = values.cost_values[0];
                        row.satisfied = values.satisfies(&thresholds, COST_TOL);
                        row.normalized_reward =
                            normalized_reward(values.reward_value, row.data_reward, row.optimal_reward).ok();
                        row.converged = o.converged;
                        row.iterations = o.iterations;
                        row.lambda = o.lambda;
                        row.cost_bound = o.cost_bound;
                    }
                    Err(e) => row.error = format!("solve: {e}"),
                }
                if cfg.timing {
                    row.wall_ms = Some(elapsed);
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Every row of the sweep, ordered by run id.  Output does not depend on
/// the worker count because every run draws from its own seed streams.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build()?;
    let per_run: Vec<Vec<ResultRow>> =
        pool.install(|| (0..cfg.runs).into_par_iter().map(|run| run_single(cfg, run)).collect());
    Ok(per_run.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_runs_and_salts() {
        let a = derive_seed(1, 0, 0);
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(2, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
