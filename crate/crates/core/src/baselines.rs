//! Comparison algorithms: behavior cloning, the maximum-likelihood model
//! solved exactly, and a constrained variant of SPIBB.

use nalgebra::DMatrix;

use crate::cmdp::{
    policy_q_values, policy_values, solve_cmdp_for_reward, solve_cmdp_with, Cmdp, CmdpSolution,
    TabularPolicy,
};
use crate::datagen::EmpiricalDistribution;
use crate::dice::{fallback_policy, FallbackRule};
use crate::error::{Error, Result};

/// Empirical action frequencies per observed state.
pub fn behavior_cloning(dist: &EmpiricalDistribution, rule: FallbackRule) -> Result<TabularPolicy> {
    fallback_policy(dist, rule)
}

/// Maximum-likelihood CMDP of the data.
///
/// Observed pairs get the empirical successor distribution and mean
/// reward and costs.  Unobserved pairs become zero-reward, zero-cost
/// self-loops.  The initial distribution is the data's.
pub fn mle_cmdp(dist: &EmpiricalDistribution, thresholds: &[f64]) -> Result<Cmdp> {
    let (n, na) = (dist.num_states(), dist.num_actions());
    let mut transition = vec![0.0; n * na * n];
    for s in 0..n {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * n..(s * na + a + 1) * n];
            if dist.sa_weight()[(s, a)] > 0.0 {
                for (s_next, p) in dist.conditional(s, a) {
                    row[s_next] = p;
                }
            } else {
                row[s] = 1.0;
            }
        }
    }
    let mut initial = dist.init_weight().to_vec();
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= total);
    Cmdp::new(
        n,
        na,
        transition,
        dist.reward().clone(),
        dist.costs().to_vec(),
        thresholds.to_vec(),
        initial,
        dist.discount(),
    )
}

fn unobserved_mask(dist: &EmpiricalDistribution) -> DMatrix<f64> {
    dist.sa_weight().map(|w| if w > 0.0 { 0.0 } else { 1.0 })
}

/// Solves the MLE CMDP exactly.
///
/// Among the LP's optimal occupancies the one with the least mass on
/// unobserved pairs is kept, and states the solution never visits take
/// the fallback rows.  When the MLE model admits no feasible policy the
/// minimal-cost policy of the model is returned instead.
pub fn mle_baseline(
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    rule: FallbackRule,
) -> Result<TabularPolicy> {
    let model = mle_cmdp(dist, thresholds)?;
    let fallback = fallback_policy(dist, rule)?;
    let first = match solve_cmdp_with(&model, None) {
        Ok(sol) => sol,
        Err(Error::Infeasible { .. }) => {
            let sol = crate::cmdp::min_cost_policy(&model, None)?;
            return TabularPolicy::from_weights(sol.occupancy.matrix(), &fallback);
        }
        Err(e) => return Err(e),
    };
    let sol = least_unobserved_mass(&model, dist, &first).unwrap_or(first);
    TabularPolicy::from_weights(sol.occupancy.matrix(), &fallback)
}

/// Second LP stage: keep the reward within a relative `1e-9` of the optimum
/// and minimize mass on unobserved pairs.
fn least_unobserved_mass(model: &Cmdp, dist: &EmpiricalDistribution, first: &CmdpSolution) -> Option<CmdpSolution> {
    let v_star = first.values.reward_value;
    let top = model.reward().max();
    let mut costs = model.costs().to_vec();
    let mut thresholds = model.thresholds().to_vec();
    // E_d[top - R] <= top - (V* - slack) is the reward floor as a cost
    costs.push(model.reward().map(|r| top - r));
    thresholds.push(top - v_star + 1e-9 * (1.0 + v_star.abs()));
    let staged = model.with_costs(costs, thresholds).ok()?;
    let penalty = -unobserved_mask(dist);
    let sol = solve_cmdp_for_reward(&staged, &penalty, None).ok()?;
    let values = policy_values(model, &sol.policy).ok()?;
    let feasible = values.satisfies(model.thresholds(), 1e-8);
    feasible.then_some(CmdpSolution { values, ..sol })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpibbConfig {
    /// Pairs seen fewer times than this copy the behavior policy.
    pub n_wedge: usize,
    pub lambda_step: f64,
    pub lambda_iterations: usize,
    pub lambda_max: f64,
    /// Cap on policy-iteration sweeps per multiplier value.
    pub pi_iterations: usize,
}

impl Default for SpibbConfig {
    fn default() -> Self {
        Self {
            n_wedge: 5,
            lambda_step: 0.1,
            lambda_iterations: 200,
            lambda_max: 1e3,
            pi_iterations: 100,
        }
    }
}

/// Greedy step constrained to copy `behavior` on bootstrapped pairs; the
/// remaining mass goes to the best non-bootstrapped action.
fn spibb_greedy(q: &DMatrix<f64>, behavior: &TabularPolicy, bootstrapped: &[bool]) -> Result<TabularPolicy> {
    let (n, na) = (q.nrows(), q.ncols());
    let mut p = DMatrix::zeros(n, na);
    for s in 0..n {
        let mut free = 1.0;
        let mut best: Option<usize> = None;
        for a in 0..na {
            if bootstrapped[s * na + a] {
                p[(s, a)] = behavior.prob(s, a);
                free -= behavior.prob(s, a);
            } else if best.is_none_or(|b| q[(s, a)] > q[(s, b)]) {
                best = Some(a);
            }
        }
        if let Some(b) = best {
            p[(s, b)] += free.max(0.0);
        }
        let total: f64 = p.row(s).sum();
        for a in 0..na {
            p[(s, a)] /= total;
        }
    }
    TabularPolicy::new(p)
}

/// SPIBB policy iteration on the MLE model for a scalar reward.
fn spibb(
    model: &Cmdp,
    reward: &DMatrix<f64>,
    behavior: &TabularPolicy,
    bootstrapped: &[bool],
    cfg: &SpibbConfig,
) -> Result<TabularPolicy> {
    let mut pi = behavior.clone();
    for _ in 0..cfg.pi_iterations {
        let (_, q) = policy_q_values(model, reward, &pi)?;
        let next = spibb_greedy(&q, behavior, bootstrapped)?;
        let change = (next.probs() - pi.probs()).amax();
        pi = next;
        if change == 0.0 {
            break;
        }
    }
    Ok(pi)
}

/// C-SPIBB: SPIBB on `R - lambda . C` with `lambda` moved along
/// `V_C(pi) - c` as estimated in the MLE model.
///
/// Returns the policy of the last multiplier value.
pub fn c_spibb(
    dist: &EmpiricalDistribution,
    thresholds: &[f64],
    cfg: &SpibbConfig,
    rule: FallbackRule,
) -> Result<TabularPolicy> {
    if dist.discount() >= 1.0 {
        return Err(Error::InvalidArgument("SPIBB needs a discount below one".into()));
    }
    let model = mle_cmdp(dist, thresholds)?;
    let behavior = fallback_policy(dist, rule)?;
    let (n, na) = (dist.num_states(), dist.num_actions());
    let bootstrapped: Vec<bool> = (0..n * na).map(|i| dist.count(i / na, i % na) < cfg.n_wedge).collect();
    let mut lambda = vec![0.0; thresholds.len()];
    let mut pi = behavior.clone();
    for _ in 0..cfg.lambda_iterations {
        let mut reward = model.reward().clone();
        for (k, c) in model.costs().iter().enumerate() {
            if thresholds[k].is_finite() {
                reward -= c * lambda[k];
            }
        }
        pi = spibb(&model, &reward, &behavior, &bootstrapped, cfg)?;
        let values = policy_values(&model, &pi)?;
        let mut moved = false;
        for k in 0..lambda.len() {
            if !thresholds[k].is_finite() {
                continue;
            }
            let next = (lambda[k] + cfg.lambda_step * (values.cost_values[k] - thresholds[k]))
                .clamp(0.0, cfg.lambda_max);
            moved |= next != lambda[k];
            lambda[k] = next;
        }
        if !moved {
            break;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{random_cmdp, solve_cmdp, GenParams};
    use crate::datagen::{sample_trajectories, Weighting};

    fn setup(episodes: usize) -> (Cmdp, EmpiricalDistribution) {
        let params = GenParams {
            num_states: 6,
            num_actions: 3,
            ..GenParams::default()
        };
        let m = random_cmdp(2, &params).unwrap();
        let pi = TabularPolicy::uniform(6, 3);
        let ds = sample_trajectories(&m, &pi, episodes, 9, 50).unwrap();
        let dist = EmpiricalDistribution::from_dataset(&ds, 6, 3, m.discount(), Weighting::Uniform).unwrap();
        (m, dist)
    }

    #[test]
    fn mle_model_rows_are_distributions() {
        let (m, dist) = setup(20);
        let model = mle_cmdp(&dist, m.thresholds()).unwrap();
        for s in 0..6 {
            for a in 0..3 {
                let total: f64 = model.transition_row(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                if dist.count(s, a) == 0 {
                    assert_eq!(model.transition_row(s, a)[s], 1.0);
                }
            }
        }
    }

    #[test]
    fn mle_baseline_is_optimal_in_the_model() {
        let (m, dist) = setup(200);
        let model = mle_cmdp(&dist, m.thresholds()).unwrap();
        let pi = mle_baseline(&dist, m.thresholds(), FallbackRule::Uniform).unwrap();
        let (_, best) = solve_cmdp(&model).unwrap();
        let v = policy_values(&model, &pi).unwrap();
        assert!((v.reward_value - best.reward_value).abs() < 1e-6);
        assert!(v.cost_values[0] <= m.thresholds()[0] + 1e-8);
    }

    #[test]
    fn spibb_copies_behavior_on_rare_pairs() {
        let (m, dist) = setup(3);
        let cfg = SpibbConfig {
            n_wedge: 1_000_000,
            ..SpibbConfig::default()
        };
        let pi = c_spibb(&dist, m.thresholds(), &cfg, FallbackRule::Uniform).unwrap();
        let bc = behavior_cloning(&dist, FallbackRule::Uniform).unwrap();
        assert!((pi.probs() - bc.probs()).amax() < 1e-12);
    }
}
