//! Exact policy evaluation and unconstrained planning.

use nalgebra::{DMatrix, DVector};

use super::model::{Cmdp, OccupancyMeasure, PolicyValues, TabularPolicy};
use crate::error::{Error, Result};

/// Residual at which value iteration stops.
pub const VI_TOL: f64 = 1e-11;
const VI_MAX_SWEEPS: usize = 1_000_000;

fn check_shapes(cmdp: &Cmdp, policy: &TabularPolicy) -> Result<()> {
    if policy.num_states() != cmdp.num_states() || policy.num_actions() != cmdp.num_actions() {
        return Err(Error::InvalidPolicy(format!(
            "policy is {}x{}, model is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            cmdp.num_states(),
            cmdp.num_actions()
        )));
    }
    Ok(())
}

/// `P_pi(s, s') = sum_a pi(a | s) T(s' | s, a)`.
pub fn state_transition_matrix(cmdp: &Cmdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let n = cmdp.num_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..cmdp.num_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for &(next, t) in cmdp.successors(s, a) {
                p[(s, next)] += pa * t;
            }
        }
    }
    p
}

fn occupancy_from_states(policy: &TabularPolicy, state_dist: &[f64]) -> Result<OccupancyMeasure> {
    let mut d = DMatrix::zeros(policy.num_states(), policy.num_actions());
    for (s, &mass) in state_dist.iter().enumerate() {
        // the direct solve can leave rounding-level negatives
        let mass = mass.max(0.0);
        for a in 0..policy.num_actions() {
            d[(s, a)] = mass * policy.prob(s, a);
        }
    }
    OccupancyMeasure::new(d)
}

/// Occupancy measure `d^pi` of `policy`.
///
/// For `gamma < 1` this is the discounted, `(1 - gamma)`-normalized visitation
/// obtained from one dense solve of `(I - gamma P_pi^T) d = (1 - gamma) p0`.
/// For `gamma = 1` it is the Cesaro average, which exists here only when the
/// chain started from `p0` reaches exactly one closed recurrent class.
pub fn stationary_distribution(cmdp: &Cmdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    check_shapes(cmdp, policy)?;
    let n = cmdp.num_states();
    let p = state_transition_matrix(cmdp, policy);
    let gamma = cmdp.discount();
    let state_dist = if gamma < 1.0 {
        let m = DMatrix::identity(n, n) - p.transpose() * gamma;
        let rhs = DVector::from_iterator(n, cmdp.initial().iter().map(|x| (1.0 - gamma) * x));
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("discounted flow system".into()))?;
        sol.iter().copied().collect::<Vec<_>>()
    } else {
        average_state_distribution(&p, cmdp.initial())?
    };
    occupancy_from_states(policy, &state_dist)
}

fn reachable_from(p: &DMatrix<f64>, start: &[usize]) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = start.to_vec();
    for &s in start {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        for next in 0..n {
            if p[(s, next)] > 0.0 && !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen
}

fn average_state_distribution(p: &DMatrix<f64>, initial: &[f64]) -> Result<Vec<f64>> {
    let n = p.nrows();
    let starts: Vec<usize> = (0..n).filter(|&s| initial[s] > 0.0).collect();
    let reachable = reachable_from(p, &starts);
    let reach_sets: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            if reachable[s] {
                reachable_from(p, &[s])
            } else {
                Vec::new()
            }
        })
        .collect();
    // s is recurrent iff every state reachable from s can reach back to s
    let recurrent: Vec<bool> = (0..n)
        .map(|s| reachable[s] && (0..n).all(|t| !reach_sets[s][t] || reach_sets[t][s]))
        .collect();
    let Some(first) = (0..n).find(|&s| recurrent[s]) else {
        return Err(Error::NoUniqueStationary("no recurrent class".into()));
    };
    let class: Vec<usize> = (0..n).filter(|&t| reach_sets[first][t]).collect();
    if (0..n).any(|s| recurrent[s] && !reach_sets[first][s]) {
        return Err(Error::NoUniqueStationary(
            "several recurrent classes are reachable from p0".into(),
        ));
    }
    let m = class.len();
    let mut a = DMatrix::zeros(m, m);
    for (i, &si) in class.iter().enumerate() {
        for (j, &sj) in class.iter().enumerate() {
            a[(j, i)] = p[(si, sj)];
        }
        a[(i, i)] -= 1.0;
    }
    let mut b = DVector::zeros(m);
    // replace one balance equation by the normalization
    for i in 0..m {
        a[(m - 1, i)] = 1.0;
    }
    b[m - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("recurrent-class balance equations".into()))?;
    let mut dist = vec![0.0; n];
    for (i, &s) in class.iter().enumerate() {
        dist[s] = x[i];
    }
    Ok(dist)
}

/// `V_R(pi)` and `V_{C_k}(pi)` from the exact occupancy measure.
pub fn policy_values(cmdp: &Cmdp, policy: &TabularPolicy) -> Result<PolicyValues> {
    let d = stationary_distribution(cmdp, policy)?;
    Ok(values_from_occupancy(cmdp, &d))
}

pub fn values_from_occupancy(cmdp: &Cmdp, d: &OccupancyMeasure) -> PolicyValues {
    PolicyValues {
        reward_value: d.expect(cmdp.reward()),
        cost_values: cmdp.costs().iter().map(|c| d.expect(c)).collect(),
    }
}

/// Normalized state values and action values of `policy` for an arbitrary
/// scalar reward table: `V = (1 - gamma) r_pi + gamma P_pi V`.
pub fn policy_q_values(
    cmdp: &Cmdp,
    reward: &DMatrix<f64>,
    policy: &TabularPolicy,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_shapes(cmdp, policy)?;
    let gamma = cmdp.discount();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument(
            "action values need a discount below one".into(),
        ));
    }
    let n = cmdp.num_states();
    let p = state_transition_matrix(cmdp, policy);
    let m = DMatrix::identity(n, n) - p * gamma;
    let rhs = DVector::from_iterator(
        n,
        (0..n).map(|s| {
            (1.0 - gamma)
                * (0..cmdp.num_actions())
                    .map(|a| policy.prob(s, a) * reward[(s, a)])
                    .sum::<f64>()
        }),
    );
    let v = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("policy evaluation system".into()))?;
    let v: Vec<f64> = v.iter().copied().collect();
    let q = backup(cmdp, reward, &v);
    Ok((v, q))
}

/// One Bellman backup `Q(s, a) = (1 - gamma) r(s, a) + gamma E[V(s')]`.
pub(crate) fn backup(cmdp: &Cmdp, reward: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let gamma = cmdp.discount();
    DMatrix::from_fn(cmdp.num_states(), cmdp.num_actions(), |s, a| {
        let next: f64 = cmdp.successors(s, a).iter().map(|&(t, p)| p * v[t]).sum();
        (1.0 - gamma) * reward[(s, a)] + gamma * next
    })
}

/// Value iteration over the actions enabled in `allowed` (all when `None`).
/// Maximizes when `maximize` is set, minimizes otherwise.  Returns the
/// greedy deterministic policy (lowest action index among exact ties) and
/// the normalized action values.
pub(crate) fn value_iteration(
    cmdp: &Cmdp,
    reward: &DMatrix<f64>,
    allowed: Option<&[bool]>,
    maximize: bool,
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let gamma = cmdp.discount();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument("value iteration needs gamma < 1".into()));
    }
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    if reward.nrows() != n || reward.ncols() != na {
        return Err(Error::InvalidArgument("reward table has the wrong shape".into()));
    }
    let enabled = |s: usize, a: usize| allowed.is_none_or(|m| m[s * na + a]);
    if (0..n).any(|s| !(0..na).any(|a| enabled(s, a))) {
        return Err(Error::InvalidArgument("a state has no enabled action".into()));
    }
    let better = |x: f64, y: f64| if maximize { x > y } else { x < y };
    let mut v = vec![0.0; n];
    for _ in 0..VI_MAX_SWEEPS {
        let q = backup(cmdp, reward, &v);
        let mut delta = 0.0_f64;
        for s in 0..n {
            let mut best = f64::NAN;
            for a in 0..na {
                if enabled(s, a) && (best.is_nan() || better(q[(s, a)], best)) {
                    best = q[(s, a)];
                }
            }
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta <= VI_TOL {
            break;
        }
    }
    let q = backup(cmdp, reward, &v);
    let actions = (0..n)
        .map(|s| {
            let mut best: Option<usize> = None;
            for a in 0..na {
                if enabled(s, a) && best.is_none_or(|b| better(q[(s, a)], q[(s, b)])) {
                    best = Some(a);
                }
            }
            best.expect("every state has an enabled action")
        })
        .collect();
    Ok((actions, q))
}

/// Unconstrained optimal policy for `scalar_reward`, ignoring the model's
/// own reward and costs.  Q is reported in the normalized convention.
pub fn solve_mdp(
    cmdp: &Cmdp,
    scalar_reward: &DMatrix<f64>,
) -> Result<(TabularPolicy, DMatrix<f64>)> {
    let (actions, q) = value_iteration(cmdp, scalar_reward, None, true)?;
    Ok((TabularPolicy::deterministic(&actions, cmdp.num_actions())?, q))
}

/// `max_a Q(s, a)` per state.
pub fn state_values(q: &DMatrix<f64>) -> Vec<f64> {
    q.row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// `(V_R(pi) - V_R(pi_D)) / (V_R(pi*) - V_R(pi_D))`.
pub fn normalized_reward(v_pi: f64, v_data: f64, v_opt: f64) -> Result<f64> {
    let gap = v_opt - v_data;
    if gap < 1e-9 {
        return Err(Error::DegenerateNormalization { gap });
    }
    Ok((v_pi - v_data) / gap)
}
