//! Reference computations that avoid the library's solvers: truncated
//! series, Monte Carlo rollouts, enumeration of deterministic policies,
//! grid searches, a Lagrangian scan and a projected-gradient primal.
#![allow(dead_code)]

use coptidice::cmdp::{Cmdp, TabularPolicy};
use coptidice::datagen::EmpiricalDistribution;
use coptidice::dice::FDivergence;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(1 - gamma) sum_t gamma^t E[r_t]` by propagating the state distribution
/// until the tail is below `tol`.  Returns reward and cost values.
pub fn truncated_series(cmdp: &Cmdp, policy: &TabularPolicy, tol: f64) -> (f64, Vec<f64>) {
    let gamma = cmdp.discount();
    assert!(gamma < 1.0);
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut dist = cmdp.initial().to_vec();
    let mut weight = 1.0 - gamma;
    let mut reward = 0.0;
    let mut costs = vec![0.0; cmdp.num_costs()];
    while weight > tol * (1.0 - gamma) {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if dist[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let m = dist[s] * policy.prob(s, a);
                if m == 0.0 {
                    continue;
                }
                reward += weight * m * cmdp.reward()[(s, a)];
                for (k, c) in cmdp.costs().iter().enumerate() {
                    costs[k] += weight * m * c[(s, a)];
                }
                for (t, p) in cmdp.transition_row(s, a).iter().enumerate() {
                    next[t] += m * p;
                }
            }
        }
        dist = next;
        weight *= gamma;
    }
    (reward, costs)
}

/// Monte Carlo estimate of the normalized values from rollouts stopped at
/// a geometric time with continuation probability `gamma`; the tables at
/// the stopping step are unbiased for the normalized values.  Returns
/// `(reward, cost_0, stderr)` with the standard error of the reward.
pub fn monte_carlo(cmdp: &Cmdp, policy: &TabularPolicy, episodes: usize, seed: u64) -> (f64, f64, f64) {
    let gamma = cmdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, probs: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|p| *p > 0.0).unwrap()
    };
    let (mut sum_r, mut sum_r2, mut sum_c) = (0.0, 0.0, 0.0);
    for _ in 0..episodes {
        let mut s = draw(&mut rng, cmdp.initial());
        loop {
            let row: Vec<f64> = (0..cmdp.num_actions()).map(|a| policy.prob(s, a)).collect();
            let a = draw(&mut rng, &row);
            if rng.random::<f64>() < 1.0 - gamma {
                let r = cmdp.reward()[(s, a)];
                sum_r += r;
                sum_r2 += r * r;
                sum_c += cmdp.cost(0)[(s, a)];
                break;
            }
            s = draw(&mut rng, cmdp.transition_row(s, a));
        }
    }
    let n = episodes as f64;
    let mean = sum_r / n;
    let var = (sum_r2 / n - mean * mean).max(0.0);
    (mean, sum_c / n, (var / n).sqrt())
}

/// Every deterministic policy of a small model.
pub fn deterministic_policies(num_states: usize, num_actions: usize) -> Vec<TabularPolicy> {
    let total = num_actions.pow(num_states as u32);
    (0..total)
        .map(|mut code| {
            let actions: Vec<usize> = (0..num_states)
                .map(|_| {
                    let a = code % num_actions;
                    code /= num_actions;
                    a
                })
                .collect();
            TabularPolicy::deterministic(&actions, num_actions).unwrap()
        })
        .collect()
}

/// Constrained optimum with one cost by enumeration: the optimum of a linear
/// program over the occupancy polytope with one extra inequality lies on a
/// segment between two vertices, and the vertices are the occupancies of
/// deterministic policies.  `None` when no mixture is feasible.
pub fn enumerated_cmdp_optimum(cmdp: &Cmdp, threshold: f64) -> Option<f64> {
    let values: Vec<(f64, f64)> = deterministic_policies(cmdp.num_states(), cmdp.num_actions())
        .iter()
        .map(|p| {
            let (r, c) = truncated_series(cmdp, p, 1e-14);
            (r, c.first().copied().unwrap_or(0.0))
        })
        .collect();
    let mut best: Option<f64> = None;
    let mut consider = |v: f64| best = Some(best.map_or(v, |b: f64| b.max(v)));
    for &(r, c) in &values {
        if c <= threshold {
            consider(r);
        }
    }
    for &(r1, c1) in &values {
        for &(r2, c2) in &values {
            // theta on the first, the rest on the second
            if c1 <= threshold && c2 > threshold {
                let theta = (c2 - threshold) / (c2 - c1);
                consider(theta * r1 + (1.0 - theta) * r2);
            }
        }
    }
    best
}

/// Unconstrained optimum of a scalar reward by plain value iteration.
pub fn value_iteration(cmdp: &Cmdp, reward: &DMatrix<f64>) -> f64 {
    let gamma = cmdp.discount();
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut v = vec![0.0; n];
    loop {
        let mut delta: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let ev: f64 = cmdp.transition_row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                        (1.0 - gamma) * reward[(s, a)] + gamma * ev
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (a, b) in next.iter().zip(&v) {
            delta = delta.max((a - b).abs());
        }
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    cmdp.initial().iter().zip(&v).map(|(p, x)| p * x).sum()
}

/// Constrained optimum with one cost by minimizing the Lagrangian dual
/// `g(l) = max_pi V_{R - l C} + l c` over a grid and then a golden-section
/// refinement; `g` is convex and its minimum is the optimum.
pub fn lagrangian_scan(cmdp: &Cmdp, threshold: f64, lambda_max: f64) -> f64 {
    let g = |l: f64| value_iteration(cmdp, &(cmdp.reward() - cmdp.cost(0) * l)) + l * threshold;
    let steps = 200;
    let grid: Vec<f64> = (0..=steps).map(|i| lambda_max * i as f64 / steps as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&l| g(l)).collect();
    let i = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut lo, mut hi) = (grid[i.saturating_sub(1)], grid[(i + 1).min(steps)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if g(a) < g(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    g(0.5 * (lo + hi))
}

/// `argmax_{w >= 0} w x - alpha f(w)` by successive grid refinement.
pub fn grid_argmax(x: f64, alpha: f64, fdiv: FDivergence) -> f64 {
    let h = |w: f64| w * x - alpha * fdiv.f(w);
    let mut hi = 1.0;
    while h(2.0 * hi) > h(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    hi *= 2.0;
    let points = 201;
    while hi - lo > 1e-12 * (1.0 + hi) {
        let step = (hi - lo) / (points - 1) as f64;
        let best = (0..points)
            .map(|i| lo + step * i as f64)
            .max_by(|a, b| h(*a).total_cmp(&h(*b)))
            .unwrap();
        lo = (best - step).max(0.0);
        hi = best + step;
    }
    0.5 * (lo + hi)
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Regularized primal `max E_{d^D}[w R] - alpha E_{d^D}[f(w)]` over
/// `w >= 0` subject to the empirical flow equalities on observed states and
/// `E_{d^D}[w C_k] <= c_k`, for the chi-square generator.
///
/// Projected gradient ascent in the `d^D`-weighted inner product, where the
/// objective has curvature exactly `alpha`, with step `1 / alpha`.  The
/// projection onto the intersection of the affine flow set, the cost
/// halfspaces and the orthant is exact, by enumeration of active sets, so
/// this is only meant for a dozen pairs or fewer.
pub fn projected_gradient_primal(dist: &EmpiricalDistribution, thresholds: &[f64], alpha: f64) -> f64 {
    let (n, na) = (dist.num_states(), dist.num_actions());
    let gamma = dist.discount();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .filter(|&(s, a)| dist.sa_weight()[(s, a)] > 0.0)
        .collect();
    let m = pairs.len();
    let p = DVector::from_iterator(m, pairs.iter().map(|&(s, a)| dist.sa_weight()[(s, a)]));
    let reward = DVector::from_iterator(m, pairs.iter().map(|&(s, a)| dist.reward()[(s, a)]));
    let init_total: f64 = dist.init_weight().iter().sum();
    let observed: Vec<usize> = (0..n).filter(|&s| pairs.iter().any(|&(t, _)| t == s)).collect();

    // flow rows: outflow minus discounted inflow
    let mut a_mat = DMatrix::<f64>::zeros(observed.len(), m);
    let mut b = DVector::zeros(observed.len());
    for (row, &s) in observed.iter().enumerate() {
        b[row] = (1.0 - gamma) * dist.init_weight()[s] / init_total;
        for (j, &(s2, a2)) in pairs.iter().enumerate() {
            if s2 == s {
                a_mat[(row, j)] += p[j];
            }
            for &(t, q) in dist.sas_weight(s2, a2) {
                if t == s {
                    a_mat[(row, j)] -= gamma * q;
                }
            }
        }
    }
    let dinv: DVector<f64> = p.map(|v| 1.0 / v);
    let halfspaces: Vec<(DVector<f64>, f64)> = dist
        .costs()
        .iter()
        .zip(thresholds)
        .filter(|(_, t)| t.is_finite())
        .map(|(c, &t)| (DVector::from_iterator(m, pairs.iter().enumerate().map(|(j, &(s, a))| p[j] * c[(s, a)])), t))
        .collect();

    // exact weighted projection: every candidate active set (pairs held at
    // zero, cost rows held tight) gives an equality-constrained projection;
    // the closest feasible candidate is the projection
    let project = |y: &DVector<f64>| -> DVector<f64> {
        let k = halfspaces.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for zero in 0u32..(1 << m) {
            let free: Vec<usize> = (0..m).filter(|j| zero & (1 << j) == 0).collect();
            for tight in 0u32..(1 << k) {
                let rows: Vec<(DVector<f64>, f64)> = (0..a_mat.nrows())
                    .map(|r| (a_mat.row(r).transpose(), b[r]))
                    .chain((0..k).filter(|i| tight & (1 << i) != 0).map(|i| halfspaces[i].clone()))
                    .collect();
                let g = DMatrix::from_fn(rows.len(), free.len(), |r, c| rows[r].0[free[c]]);
                let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
                let yf = DVector::from_iterator(free.len(), free.iter().map(|&j| y[j]));
                let df = DMatrix::from_diagonal(&DVector::from_iterator(free.len(), free.iter().map(|&j| dinv[j])));
                let gram: DMatrix<f64> = &g * &df * g.transpose();
                let Ok(inv) = gram.pseudo_inverse(1e-13) else { continue };
                let mu = inv * (&g * &yf - &rhs);
                let wf = &yf - &df * g.transpose() * mu;
                let mut w = DVector::zeros(m);
                for (c, &j) in free.iter().enumerate() {
                    w[j] = wf[c];
                }
                let feasible = w.iter().all(|v| *v >= -1e-12)
                    && (&a_mat * &w - &b).amax() <= 1e-10
                    && halfspaces.iter().all(|(c, t)| c.dot(&w) <= t + 1e-12);
                if !feasible {
                    continue;
                }
                let dist: f64 = (0..m).map(|j| p[j] * (w[j] - y[j]).powi(2)).sum();
                if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, w.map(|v| v.max(0.0))));
                }
            }
        }
        best.expect("empty feasible set").1
    };
    let objective = |w: &DVector<f64>| -> f64 {
        (0..m).map(|j| p[j] * (w[j] * reward[j] - alpha * 0.5 * (w[j] - 1.0).powi(2))).sum()
    };
    let mut w = project(&DVector::from_element(m, 1.0));
    for _ in 0..50 {
        // gradient in the weighted inner product is R - alpha (w - 1)
        let step = &w + (&reward - (&w - DVector::from_element(m, 1.0)) * alpha) / alpha;
        let next = project(&step);
        let change = (&next - &w).amax();
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    objective(&w)
}

/// Random stochastic policy with every probability at least `floor`.
pub fn random_policy(rng: &mut impl Rng, num_states: usize, num_actions: usize, floor: f64) -> TabularPolicy {
    let probs = DMatrix::from_fn(num_states, num_actions, |_, _| floor + rng.random::<f64>());
    let probs = DMatrix::from_fn(num_states, num_actions, |s, a| probs[(s, a)] / probs.row(s).sum());
    TabularPolicy::new(probs).unwrap()
}
