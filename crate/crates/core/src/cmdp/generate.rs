//! Random CMDPs with sparse Dirichlet transitions and a hard-to-reach goal.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};

use super::eval::{state_values, value_iteration};
use super::model::Cmdp;
use crate::error::{Error, Result};

/// Bumped whenever the sampling order of [`random_cmdp`] changes.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    /// Number of distinct successors per `(s, a)`, capped at `num_states`.
    pub connectivity: usize,
    pub dirichlet_alpha: f64,
    pub cost_beta: (f64, f64),
    pub num_costs: usize,
    pub threshold: f64,
    pub initial_state: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            num_states: 50,
            num_actions: 4,
            discount: 0.95,
            connectivity: 4,
            dirichlet_alpha: 1.0,
            cost_beta: (0.2, 0.2),
            num_costs: 1,
            threshold: 0.1,
            initial_state: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_states == 0 || self.num_actions == 0 || self.connectivity == 0 {
            return bad("sizes and connectivity must be positive");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("generated models need a discount in (0, 1)");
        }
        if !(self.dirichlet_alpha > 0.0) || !(self.cost_beta.0 > 0.0) || !(self.cost_beta.1 > 0.0) {
            return bad("distribution parameters must be positive");
        }
        if self.num_costs == 0 {
            return bad("at least one cost function is required");
        }
        if self.initial_state >= self.num_states {
            return bad("initial state out of range");
        }
        if self.threshold.is_nan() {
            return bad("threshold is NaN");
        }
        Ok(())
    }
}

/// Samples a CMDP: each `(s, a)` moves to `connectivity` distinct uniformly
/// chosen states with Dirichlet probabilities; action 0 is free and the
/// others draw Beta costs; reward 1 sits on the single state whose optimal
/// value from `s0` is smallest.
pub fn random_cmdp(seed: u64, params: &GenParams) -> Result<Cmdp> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, na) = (params.num_states, params.num_actions);
    let k = params.connectivity.min(n);
    let gamma_dist = Gamma::new(params.dirichlet_alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut transition = vec![0.0; n * na * n];
    for row in transition.chunks_mut(n) {
        let targets = sample(&mut rng, n, k).into_vec();
        let draws: Vec<f64> = (0..k).map(|_| gamma_dist.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for (&t, &g) in targets.iter().zip(&draws) {
            row[t] = g / total;
        }
        // a Gamma draw can underflow to zero for tiny alpha; keep the
        // successor set intact
        for &t in &targets {
            if row[t] == 0.0 {
                row[t] = f64::MIN_POSITIVE;
            }
        }
    }
    let beta = Beta::new(params.cost_beta.0, params.cost_beta.1)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let costs: Vec<DMatrix<f64>> = (0..params.num_costs)
        .map(|_| {
            let mut c = DMatrix::zeros(n, na);
            for s in 0..n {
                for a in 1..na {
                    c[(s, a)] = beta.sample(&mut rng);
                }
            }
            c
        })
        .collect();
    let mut initial = vec![0.0; n];
    initial[params.initial_state] = 1.0;
    let base = Cmdp::new(
        n,
        na,
        transition,
        DMatrix::zeros(n, na),
        costs,
        vec![params.threshold; params.num_costs],
        initial,
        params.discount,
    )?;
    let goal = hardest_goal(&base, params.initial_state)?;
    base.with_reward(goal_reward(n, na, goal))
}

fn goal_reward(n: usize, na: usize, goal: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, na, |s, _| if s == goal { 1.0 } else { 0.0 })
}

/// Lowest-index state minimizing the optimal value at `s0` when it is the
/// only rewarding state.
pub fn hardest_goal(cmdp: &Cmdp, s0: usize) -> Result<usize> {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut best = (0, f64::INFINITY);
    for g in 0..n {
        let (_, q) = value_iteration(cmdp, &goal_reward(n, na, g), None, true)?;
        let v = state_values(&q)[s0];
        if v < best.1 {
            best = (g, v);
        }
    }
    Ok(best.0)
}

/// Convenience for tests: a small dense random model with arbitrary rewards
/// and costs in `[0, 1)`.
pub fn random_dense_cmdp(
    rng: &mut impl Rng,
    num_states: usize,
    num_actions: usize,
    num_costs: usize,
    discount: f64,
) -> Result<Cmdp> {
    let n = num_states;
    let na = num_actions;
    let mut transition = vec![0.0; n * na * n];
    for row in transition.chunks_mut(n) {
        let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = draws.iter().sum();
        for (p, d) in row.iter_mut().zip(&draws) {
            *p = d / total;
        }
    }
    let reward = DMatrix::from_fn(n, na, |_, _| rng.random::<f64>());
    let costs = (0..num_costs)
        .map(|_| DMatrix::from_fn(n, na, |_, _| rng.random::<f64>()))
        .collect();
    let initial: Vec<f64> = {
        let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = draws.iter().sum();
        draws.iter().map(|d| d / total).collect()
    };
    Cmdp::new(
        n,
        na,
        transition,
        reward,
        costs,
        vec![f64::INFINITY; num_costs],
        initial,
        discount,
    )
}
