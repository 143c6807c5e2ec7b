use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::dataset::TransitionDataset;
use crate::cmdp::{stationary_distribution, Cmdp, OccupancyMeasure, TabularPolicy};
use crate::error::{Error, Result};

/// How records are weighted when forming `d^D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Every record counts `1 / N`.
    #[default]
    Uniform,
    /// A record at step `t` counts proportionally to `gamma^t`.
    Discounted,
}

/// An aggregated sample point `x = (s0, s, a, s')` with its mass under `d^D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuple {
    pub s0: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub weight: f64,
}

/// The empirical distribution `d^D` of a dataset together with the logged
/// reward and cost tables.
///
/// Weights are kept at three levels (sample tuples, `(s, a, s')` and
/// `(s, a)`) and each level is summed from the one below in a fixed order,
/// so the marginals agree up to one rounding per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    sa_weight: DMatrix<f64>,
    /// Per `(s, a)` (index `s * A + a`): observed successors with their
    /// `(s, a, s')` weight, sorted by successor.
    sas_weight: Vec<Vec<(usize, f64)>>,
    init_weight: Vec<f64>,
    sa_count: Vec<usize>,
    reward: DMatrix<f64>,
    costs: Vec<DMatrix<f64>>,
    tuples: Vec<Tuple>,
    num_records: usize,
}

impl EmpiricalDistribution {
    /// `d^D` of a logged dataset.  `discount` is the problem discount; it
    /// also sets the decay of [`Weighting::Discounted`].
    pub fn from_dataset(
        dataset: &TransitionDataset,
        num_states: usize,
        num_actions: usize,
        discount: f64,
        weighting: Weighting,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let k = dataset.num_costs();
        let mut raw: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
        let mut sa_count = vec![0usize; num_states * num_actions];
        let mut reward_sum = DMatrix::zeros(num_states, num_actions);
        let mut cost_sum = vec![DMatrix::zeros(num_states, num_actions); k];
        let mut total = 0.0;
        for rec in dataset.records() {
            if rec.s >= num_states || rec.s_next >= num_states || rec.a >= num_actions {
                return Err(Error::InvalidArgument("record index out of range".into()));
            }
            let w = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::Discounted => discount.powi(rec.t as i32),
            };
            total += w;
            *raw.entry((rec.s, rec.a, rec.s_next, rec.s0)).or_default() += w;
            sa_count[rec.s * num_actions + rec.a] += 1;
            reward_sum[(rec.s, rec.a)] += rec.r;
            for (c, v) in cost_sum.iter_mut().zip(&rec.c) {
                c[(rec.s, rec.a)] += v;
            }
        }
        let mean = |sum: &DMatrix<f64>| {
            DMatrix::from_fn(num_states, num_actions, |s, a| {
                let n = sa_count[s * num_actions + a];
                if n == 0 {
                    0.0
                } else {
                    sum[(s, a)] / n as f64
                }
            })
        };
        let tuples: Vec<Tuple> = raw
            .into_iter()
            .map(|((s, a, s_next, s0), w)| Tuple {
                s0,
                s,
                a,
                s_next,
                weight: w / total,
            })
            .collect();
        // the initial-state marginal of the sample tuples, so that the flow
        // terms of every estimator refer to the same distribution
        let mut init_weight = vec![0.0; num_states];
        for t in &tuples {
            init_weight[t.s0] += t.weight;
        }
        let reward = mean(&reward_sum);
        let costs = cost_sum.iter().map(mean).collect();
        Ok(Self::assemble(
            num_states,
            num_actions,
            discount,
            tuples,
            init_weight,
            sa_count,
            reward,
            costs,
            dataset.len(),
        ))
    }

    /// Exact-model `d^D`: the true occupancy of `policy` on `cmdp`, true
    /// transitions and tables, and tuples `p0(s0) d(s, a) T(s' | s, a)`.
    pub fn exact(cmdp: &Cmdp, policy: &TabularPolicy) -> Result<Self> {
        let d = stationary_distribution(cmdp, policy)?;
        Self::from_occupancy(cmdp, &d)
    }

    /// Exact-model distribution built from a given occupancy.
    pub fn from_occupancy(cmdp: &Cmdp, d: &OccupancyMeasure) -> Result<Self> {
        let (n, na) = (cmdp.num_states(), cmdp.num_actions());
        if d.matrix().nrows() != n || d.matrix().ncols() != na {
            return Err(Error::InvalidArgument("occupancy shape does not match the model".into()));
        }
        let total = d.total();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("occupancy has no mass".into()));
        }
        let starts: Vec<(usize, f64)> = cmdp
            .initial()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .collect();
        let mut tuples = Vec::new();
        for s in 0..n {
            for a in 0..na {
                let mass = d.get(s, a) / total;
                if mass <= 0.0 {
                    continue;
                }
                for &(s_next, p) in cmdp.successors(s, a) {
                    for &(s0, p0) in &starts {
                        tuples.push(Tuple {
                            s0,
                            s,
                            a,
                            s_next,
                            weight: mass * p * p0,
                        });
                    }
                }
            }
        }
        Ok(Self::assemble(
            n,
            na,
            cmdp.discount(),
            tuples,
            cmdp.initial().to_vec(),
            vec![0; n * na],
            cmdp.reward().clone(),
            cmdp.costs().to_vec(),
            0,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        tuples: Vec<Tuple>,
        init_weight: Vec<f64>,
        sa_count: Vec<usize>,
        reward: DMatrix<f64>,
        costs: Vec<DMatrix<f64>>,
        num_records: usize,
    ) -> Self {
        // tuples arrive grouped by (s, a, s'), so each sum runs in tuple order
        let mut sas_weight: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_states * num_actions];
        for t in &tuples {
            let row = &mut sas_weight[t.s * num_actions + t.a];
            match row.last_mut() {
                Some((next, w)) if *next == t.s_next => *w += t.weight,
                _ => row.push((t.s_next, t.weight)),
            }
        }
        let sa_weight = DMatrix::from_fn(num_states, num_actions, |s, a| {
            sas_weight[s * num_actions + a].iter().map(|x| x.1).sum()
        });
        Self {
            num_states,
            num_actions,
            discount,
            sa_weight,
            sas_weight,
            init_weight,
            sa_count,
            reward,
            costs,
            tuples,
            num_records,
        }
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

    pub fn sa_weight(&self) -> &DMatrix<f64> {
        &self.sa_weight
    }

    /// Observed successors of `(s, a)` with their joint `(s, a, s')` mass.
    pub fn sas_weight(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.sas_weight[s * self.num_actions + a]
    }

    /// Empirical `T(s' | s, a)` over observed successors.
    pub fn conditional(&self, s: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let total = self.sa_weight[(s, a)];
        self.sas_weight(s, a).iter().map(move |&(t, w)| (t, w / total))
    }

    pub fn init_weight(&self) -> &[f64] {
        &self.init_weight
    }

    /// Number of records at `(s, a)`; zero everywhere in exact mode.
    pub fn count(&self, s: usize, a: usize) -> usize {
        self.sa_count[s * self.num_actions + a]
    }

    pub fn state_count(&self, s: usize) -> usize {
        (0..self.num_actions).map(|a| self.count(s, a)).sum()
    }

    /// Whether `s` carries any mass under `d^D`.
    pub fn observed(&self, s: usize) -> bool {
        (0..self.num_actions).any(|a| self.sa_weight[(s, a)] > 0.0)
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn costs(&self) -> &[DMatrix<f64>] {
        &self.costs
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    /// Records the distribution was built from (zero in exact mode).
    pub fn num_records(&self) -> usize {
        self.num_records
    }

    /// Pairs with positive mass, in `(s, a)` order.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states)
            .flat_map(move |s| (0..self.num_actions).map(move |a| (s, a)))
            .filter(move |&(s, a)| self.sa_weight[(s, a)] > 0.0)
    }

    /// Same distribution with the reward table replaced.
    pub fn with_reward(&self, reward: DMatrix<f64>) -> Result<Self> {
        if reward.shape() != self.reward.shape() {
            return Err(Error::InvalidArgument("reward table has the wrong shape".into()));
        }
        Ok(Self {
            reward,
            ..self.clone()
        })
    }

    /// Same distribution with the cost tables replaced.
    pub fn with_costs(&self, costs: Vec<DMatrix<f64>>) -> Result<Self> {
        if costs.is_empty() || costs.iter().any(|c| c.shape() != self.reward.shape()) {
            return Err(Error::InvalidArgument("cost tables have the wrong shape".into()));
        }
        Ok(Self {
            costs,
            ..self.clone()
        })
    }

    /// Empirical behavior policy `d^D(s, a) / d^D(s)`; rows of unobserved
    /// states come from `fallback`.
    pub fn behavior_policy(&self, fallback: &TabularPolicy) -> Result<TabularPolicy> {
        TabularPolicy::from_weights(&self.sa_weight, fallback)
    }
}
