//! Exact constrained planning through the occupancy-measure linear program.

use nalgebra::DMatrix;

use super::eval::{policy_values, values_from_occupancy};
use super::model::{Cmdp, OccupancyMeasure, PolicyValues, TabularPolicy};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, LpSolution};

/// Duality-gap tolerance required from every LP solve.
pub const GAP_TOL: f64 = 1e-6;
/// Feasibility tolerance on the returned policy's costs.
pub const COST_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CmdpSolution {
    pub policy: TabularPolicy,
    pub values: PolicyValues,
    pub occupancy: OccupancyMeasure,
    /// Multipliers of the cost constraints (zero for infinite thresholds).
    pub cost_multipliers: Vec<f64>,
    pub duality_gap: f64,
}

/// Which `(s, a)` pairs the LP may put mass on.  `None` means all.
pub type ActionMask = Option<Vec<bool>>;

enum LpObjective<'a> {
    MaximizeReward,
    MinimizeCost,
    Custom(&'a DMatrix<f64>),
}

struct OccupancyLp {
    vars: Vec<(usize, usize)>,
    lp: LinearProgram,
    cost_rows: Vec<usize>,
}

fn build_lp(
    cmdp: &Cmdp,
    allowed: Option<&[bool]>,
    objective: LpObjective<'_>,
    with_costs: bool,
) -> Result<OccupancyLp> {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let vars: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .filter(|&(s, a)| allowed.is_none_or(|m| m[s * na + a]))
        .collect();
    if vars.is_empty() {
        return Err(Error::InvalidArgument("action mask disables every pair".into()));
    }
    let c: Vec<f64> = vars
        .iter()
        .map(|&(s, a)| match objective {
            LpObjective::MaximizeReward => -cmdp.reward()[(s, a)],
            LpObjective::MinimizeCost => cmdp.costs().iter().map(|c| c[(s, a)]).sum(),
            LpObjective::Custom(r) => -r[(s, a)],
        })
        .collect();
    let mut lp = LinearProgram::minimize(c);
    let gamma = cmdp.discount();
    let mut flow = vec![vec![0.0; vars.len()]; n];
    for (j, &(s, a)) in vars.iter().enumerate() {
        flow[s][j] += 1.0;
        for &(next, p) in cmdp.successors(s, a) {
            flow[next][j] -= gamma * p;
        }
    }
    let undiscounted = gamma >= 1.0;
    for (s, row) in flow.into_iter().enumerate() {
        // with gamma = 1 the flow rows sum to zero; drop one and normalize
        if undiscounted && s == n - 1 {
            continue;
        }
        lp.add_eq(row, (1.0 - gamma) * cmdp.initial()[s]);
    }
    if undiscounted {
        lp.add_eq(vec![1.0; vars.len()], 1.0);
    }
    let mut cost_rows = Vec::new();
    if with_costs {
        for (k, cost) in cmdp.costs().iter().enumerate() {
            let t = cmdp.thresholds()[k];
            if t.is_finite() {
                lp.add_le(vars.iter().map(|&(s, a)| cost[(s, a)]).collect(), t);
                cost_rows.push(k);
            }
        }
    }
    Ok(OccupancyLp { vars, lp, cost_rows })
}

fn extract(
    cmdp: &Cmdp,
    problem: &OccupancyLp,
    sol: &LpSolution,
    allowed: Option<&[bool]>,
) -> Result<CmdpSolution> {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut d = DMatrix::zeros(n, na);
    for (j, &(s, a)) in problem.vars.iter().enumerate() {
        d[(s, a)] = sol.x[j];
    }
    let fallback = DMatrix::from_fn(n, na, |s, a| {
        if allowed.is_none_or(|m| m[s * na + a]) {
            1.0
        } else {
            0.0
        }
    });
    let fallback = TabularPolicy::from_weights(&fallback, &TabularPolicy::uniform(n, na))?;
    let policy = TabularPolicy::from_weights(&d, &fallback)?;
    let occupancy = OccupancyMeasure::new(d)?;
    let values = if cmdp.discount() < 1.0 {
        policy_values(cmdp, &policy)?
    } else {
        values_from_occupancy(cmdp, &occupancy)
    };
    let mut cost_multipliers = vec![0.0; cmdp.num_costs()];
    for (row, &k) in problem.cost_rows.iter().enumerate() {
        // minimization duals are <= 0 for <= rows; report the usual sign
        cost_multipliers[k] = -sol.le_duals[row];
    }
    let scale = 1.0 + sol.objective.abs();
    if sol.duality_gap > GAP_TOL * scale || sol.dual_infeasibility > GAP_TOL * scale {
        return Err(Error::Certificate(format!(
            "duality gap {:.3e}, dual infeasibility {:.3e}",
            sol.duality_gap, sol.dual_infeasibility
        )));
    }
    Ok(CmdpSolution {
        policy,
        values,
        occupancy,
        cost_multipliers,
        duality_gap: sol.duality_gap,
    })
}

/// Exact constrained-optimal (generally stochastic) policy and its values.
pub fn solve_cmdp(cmdp: &Cmdp) -> Result<(TabularPolicy, PolicyValues)> {
    let sol = solve_cmdp_with(cmdp, None)?;
    Ok((sol.policy, sol.values))
}

/// Constrained solve restricted to the pairs enabled in `allowed`.
///
/// Fails with [`Error::Infeasible`] carrying the minimal attainable total
/// cost when no enabled policy meets the thresholds.
pub fn solve_cmdp_with(cmdp: &Cmdp, allowed: Option<&[bool]>) -> Result<CmdpSolution> {
    solve_objective(cmdp, allowed, LpObjective::MaximizeReward)
}

/// Constrained solve for an arbitrary reward table (the model's costs and
/// thresholds still apply).
pub fn solve_cmdp_for_reward(
    cmdp: &Cmdp,
    reward: &DMatrix<f64>,
    allowed: Option<&[bool]>,
) -> Result<CmdpSolution> {
    solve_objective(cmdp, allowed, LpObjective::Custom(reward))
}

fn solve_objective(
    cmdp: &Cmdp,
    allowed: Option<&[bool]>,
    objective: LpObjective<'_>,
) -> Result<CmdpSolution> {
    let problem = build_lp(cmdp, allowed, objective, true)?;
    let sol = match problem.lp.solve() {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Infeasible { .. } => {
            let min_cost = min_cost_policy(cmdp, allowed)
                .map(|s| s.values.cost_values.iter().sum())
                .unwrap_or(f64::INFINITY);
            return Err(Error::Infeasible { min_cost });
        }
        LpOutcome::Unbounded => return Err(Error::Unbounded),
    };
    let solution = extract(cmdp, &problem, &sol, allowed)?;
    for (k, &t) in cmdp.thresholds().iter().enumerate() {
        let v = solution.values.cost_values[k];
        if v > t + COST_TOL {
            return Err(Error::Certificate(format!(
                "cost {k} value {v} exceeds threshold {t}"
            )));
        }
    }
    Ok(solution)
}

/// Policy minimizing the summed cost value, ignoring reward and thresholds.
pub fn min_cost_policy(cmdp: &Cmdp, allowed: Option<&[bool]>) -> Result<CmdpSolution> {
    let problem = build_lp(cmdp, allowed, LpObjective::MinimizeCost, false)?;
    match problem.lp.solve() {
        LpOutcome::Optimal(sol) => extract(cmdp, &problem, &sol, allowed),
        LpOutcome::Infeasible { .. } => Err(Error::Singular(
            "flow constraints admit no occupancy measure".into(),
        )),
        LpOutcome::Unbounded => Err(Error::Unbounded),
    }
}
