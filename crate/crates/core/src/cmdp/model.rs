use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance used when validating that probability rows sum to one.
pub const PROB_TOL: f64 = 1e-12;

/// A finite constrained MDP `<S, A, T, R, {C_k}, {c_k}, p0, gamma>`.
///
/// All values follow the `(1 - gamma)`-normalized convention, so a threshold
/// is a bound on the per-step average cost under the discounted occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmdp {
    num_states: usize,
    num_actions: usize,
    /// Dense `(s, a, s')` tensor in row-major order.
    transition: Vec<f64>,
    /// Nonzero entries of each `(s, a)` row, indexed by `s * A + a`.
    successors: Vec<Vec<(usize, f64)>>,
    reward: DMatrix<f64>,
    costs: Vec<DMatrix<f64>>,
    thresholds: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
}

impl Cmdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: DMatrix<f64>,
        costs: Vec<DMatrix<f64>>,
        thresholds: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if num_states == 0 || num_actions == 0 {
            return bad("state and action counts must be positive".into());
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return bad(format!("discount {discount} outside (0, 1]"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return bad(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            ));
        }
        let mut successors = Vec::with_capacity(num_states * num_actions);
        for (row_idx, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad(format!("transition row {row_idx} has a negative or non-finite entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return bad(format!("transition row {row_idx} sums to {total}"));
            }
            successors.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(s, p)| (s, *p))
                    .collect(),
            );
        }
        let check_table = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            if m.nrows() != num_states || m.ncols() != num_actions {
                return Err(Error::InvalidModel(format!(
                    "{name} table is {}x{}, expected {num_states}x{num_actions}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} table has non-finite entries")));
            }
            Ok(())
        };
        check_table("reward", &reward)?;
        if costs.is_empty() {
            return bad("at least one cost function is required".into());
        }
        for c in &costs {
            check_table("cost", c)?;
        }
        if thresholds.len() != costs.len() {
            return bad(format!(
                "{} thresholds for {} cost functions",
                thresholds.len(),
                costs.len()
            ));
        }
        if thresholds.iter().any(|t| t.is_nan()) {
            return bad("threshold is NaN".into());
        }
        if initial.len() != num_states {
            return bad("initial distribution has wrong length".into());
        }
        if initial.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("initial distribution has a negative entry".into());
        }
        let total: f64 = initial.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return bad(format!("initial distribution sums to {total}"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            successors,
            reward,
            costs,
            thresholds,
            initial,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_costs(&self) -> usize {
        self.costs.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    /// Sparse view of `T(. | s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.num_actions + a]
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn costs(&self) -> &[DMatrix<f64>] {
        &self.costs
    }

    pub fn cost(&self, k: usize) -> &DMatrix<f64> {
        &self.costs[k]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Same model with different cost thresholds.
    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() != self.costs.len() || thresholds.iter().any(|t| t.is_nan()) {
            return Err(Error::InvalidModel("threshold vector does not match costs".into()));
        }
        Ok(Self {
            thresholds,
            ..self.clone()
        })
    }

    /// Same model with the cost tables replaced.
    pub fn with_costs(&self, costs: Vec<DMatrix<f64>>, thresholds: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            costs,
            thresholds,
            self.initial.clone(),
            self.discount,
        )
    }

    /// Same model with a different reward table.
    pub fn with_reward(&self, reward: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            reward,
            self.costs.clone(),
            self.thresholds.clone(),
            self.initial.clone(),
            self.discount,
        )
    }

    /// Same model started from a single state.
    pub fn with_initial_state(&self, s0: usize) -> Result<Self> {
        if s0 >= self.num_states {
            return Err(Error::InvalidArgument(format!("state {s0} out of range")));
        }
        let mut initial = vec![0.0; self.num_states];
        initial[s0] = 1.0;
        Ok(Self {
            initial,
            ..self.clone()
        })
    }
}

/// Stochastic policy `pi(a | s)` stored as an `S x A` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        for (s, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range")));
            }
            probs[(s, a)] = 1.0;
        }
        Self::new(probs)
    }

    /// Row-normalizes nonnegative weights.  Rows with zero total mass copy
    /// the corresponding row of `fallback`.
    pub fn from_weights(weights: &DMatrix<f64>, fallback: &TabularPolicy) -> Result<Self> {
        let mut probs = weights.clone();
        for s in 0..probs.nrows() {
            let total: f64 = probs.row(s).iter().sum();
            if total > 0.0 && total.is_finite() {
                probs.row_mut(s).iter_mut().for_each(|v| *v /= total);
            } else {
                probs.set_row(s, &fallback.probs.row(s));
            }
        }
        Self::new(probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.probs
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &TabularPolicy, weight: f64) -> Result<Self> {
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::InvalidPolicy("mixing policies of different shapes".into()));
        }
        let mut probs = &self.probs * weight + &other.probs * (1.0 - weight);
        // re-normalize away rounding so the row-sum invariant holds exactly
        for s in 0..probs.nrows() {
            let total: f64 = probs.row(s).iter().sum();
            probs.row_mut(s).iter_mut().for_each(|v| *v /= total);
        }
        Self::new(probs)
    }

    /// Index of the most probable action in each state (lowest index on ties).
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// Normalized state-action occupancy `d(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    d: DMatrix<f64>,
}

impl OccupancyMeasure {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("occupancy has a negative entry".into()));
        }
        Ok(Self { d })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[(s, a)]
    }

    pub fn total(&self) -> f64 {
        self.d.sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.row_iter().map(|r| r.sum()).collect()
    }

    /// `E_d[table]`.
    pub fn expect(&self, table: &DMatrix<f64>) -> f64 {
        self.d.component_mul(table).sum()
    }

    /// Per-state residual of the Bellman flow identity
    /// `sum_a d(s', a) - (1 - gamma) p0(s') - gamma sum_{s,a} d(s, a) T(s' | s, a)`.
    pub fn flow_residual(&self, cmdp: &Cmdp) -> Vec<f64> {
        flow_residual(&self.d, cmdp)
    }
}

pub(crate) fn flow_residual(d: &DMatrix<f64>, cmdp: &Cmdp) -> Vec<f64> {
    let gamma = cmdp.discount();
    let mut residual: Vec<f64> = (0..cmdp.num_states())
        .map(|s| d.row(s).sum() - (1.0 - gamma) * cmdp.initial()[s])
        .collect();
    for s in 0..cmdp.num_states() {
        for a in 0..cmdp.num_actions() {
            let mass = d[(s, a)];
            if mass == 0.0 {
                continue;
            }
            for &(next, p) in cmdp.successors(s, a) {
                residual[next] -= gamma * mass * p;
            }
        }
    }
    residual
}

/// Reward and cost values of a policy under its occupancy measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    pub reward_value: f64,
    pub cost_values: Vec<f64>,
}

impl PolicyValues {
    pub fn satisfies(&self, thresholds: &[f64], tol: f64) -> bool {
        self.cost_values
            .iter()
            .zip(thresholds)
            .all(|(v, t)| *v <= t + tol)
    }
}
