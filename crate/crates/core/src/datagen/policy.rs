//! Data-collection policies: the softened-and-projected 0.9-optimal policy
//! and the limited-action-support policy.

use nalgebra::DMatrix;

use crate::cmdp::{
    policy_values, solve_cmdp_with, solve_mdp, stationary_distribution, values_from_occupancy, Cmdp,
    OccupancyMeasure, TabularPolicy,
};
use crate::datagen::EmpiricalDistribution;
use crate::dice::{optimize_naive, FDivergence, SolverConfig};
use crate::error::{Error, Result};

/// Iteration cap of both construction loops.
pub const ALGORITHM_GUARD: usize = 500;
/// Starting softmax temperature.
const TAU_START: f64 = 1e-6;
const TAU_GROWTH: f64 = 1.0 / 0.9;
/// Softmax probabilities below this are treated as no support.
const SUPPORT_CUTOFF: f64 = 1e-12;
/// How close the final reward value must sit to the 0.9-optimality level.
const LEVEL_TOL: f64 = 1e-6;
const COST_SLACK: f64 = 1e-6;
const RHO_DECAY: f64 = 0.99;
const RHO_MIN: f64 = 1e-6;
/// Weight of the solved policy in the limited-support mixture.
const LIMITED_MIX: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyMode {
    #[default]
    FullSupport,
    LimitedSupport,
}

/// Two component specs and the fraction `beta` of episodes from the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub first: Box<DataPolicySpec>,
    pub second: Box<DataPolicySpec>,
    pub beta: f64,
}

/// Description of how the logging policy is built.
///
/// With `mixture` set, the episodes come from the two component policies
/// and the outer `target_cost` and `mode` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPolicySpec {
    pub target_cost: f64,
    pub mode: PolicyMode,
    pub action_subset: Option<Vec<usize>>,
    pub mixture: Option<Mixture>,
}

impl DataPolicySpec {
    pub fn full_support(target_cost: f64) -> Self {
        Self {
            target_cost,
            mode: PolicyMode::FullSupport,
            action_subset: None,
            mixture: None,
        }
    }

    pub fn limited(action_subset: Vec<usize>, target_cost: f64) -> Self {
        Self {
            target_cost,
            mode: PolicyMode::LimitedSupport,
            action_subset: Some(action_subset),
            mixture: None,
        }
    }

    pub fn mixture(first: DataPolicySpec, second: DataPolicySpec, beta: f64) -> Self {
        Self {
            target_cost: f64::NAN,
            mode: PolicyMode::FullSupport,
            action_subset: None,
            mixture: Some(Mixture {
                first: Box::new(first),
                second: Box::new(second),
                beta,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.mixture {
            if !(0.0..=1.0).contains(&m.beta) {
                return Err(Error::InvalidArgument(format!("mixture fraction {} outside [0, 1]", m.beta)));
            }
            m.first.validate()?;
            return m.second.validate();
        }
        if self.target_cost.is_nan() || self.target_cost < 0.0 {
            return Err(Error::InvalidArgument("target cost must be >= 0".into()));
        }
        match (self.mode, &self.action_subset) {
            (PolicyMode::LimitedSupport, None) => Err(Error::InvalidArgument(
                "limited-support mode needs an action subset".into(),
            )),
            (_, Some(sub)) if sub.is_empty() || !sub.contains(&0) => Err(Error::InvalidArgument(
                "action subset must be nonempty and contain the first action".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Builds the policy of a single (non-mixture) spec.
    pub fn build(&self, cmdp: &Cmdp) -> Result<TabularPolicy> {
        self.validate()?;
        if self.mixture.is_some() {
            return Err(Error::InvalidArgument(
                "a mixture has no single policy; build its components".into(),
            ));
        }
        match self.mode {
            PolicyMode::FullSupport => build_data_policy(cmdp, self.target_cost),
            PolicyMode::LimitedSupport => build_limited_policy(
                cmdp,
                self.action_subset.as_deref().unwrap_or(&[0]),
                self.target_cost,
            ),
        }
    }

    /// Short label for dataset headers and result rows.
    pub fn label(&self) -> String {
        if let Some(m) = &self.mixture {
            return format!("mix({};{};beta={})", m.first.label(), m.second.label(), m.beta);
        }
        match (&self.mode, &self.action_subset) {
            (PolicyMode::LimitedSupport, Some(sub)) => {
                let acts: Vec<String> = sub.iter().map(|a| (a + 1).to_string()).collect();
                format!("limited(a={};cost={})", acts.join("+"), self.target_cost)
            }
            _ => format!("soft(cost={})", self.target_cost),
        }
    }
}

fn softmax_policy(q: &DMatrix<f64>, tau: f64) -> Result<TabularPolicy> {
    let mut p = DMatrix::zeros(q.nrows(), q.ncols());
    for s in 0..q.nrows() {
        let top = q.row(s).max();
        let mut total = 0.0;
        for a in 0..q.ncols() {
            p[(s, a)] = ((q[(s, a)] - top) / tau).exp();
            total += p[(s, a)];
        }
        for a in 0..q.ncols() {
            let v = p[(s, a)] / total;
            p[(s, a)] = if v < SUPPORT_CUTOFF { 0.0 } else { v };
        }
        let kept: f64 = p.row(s).sum();
        for a in 0..q.ncols() {
            p[(s, a)] /= kept;
        }
    }
    TabularPolicy::new(p)
}

/// `argmin_d D_f(d || reference)` over occupancies of `cmdp` whose costs
/// meet `thresholds`, solved through the dual of the regularized program
/// with zero reward and unit regularization on the exact model.
///
/// Returns `None` when no occupancy absolutely continuous with respect to
/// `reference` meets the thresholds.
pub fn project_occupancy(
    cmdp: &Cmdp,
    reference: &OccupancyMeasure,
    thresholds: &[f64],
) -> Result<Option<OccupancyMeasure>> {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    if values_from_occupancy(cmdp, reference).cost_values.iter().zip(thresholds).all(|(v, t)| v <= t) {
        return Ok(Some(reference.clone()));
    }
    // any policy supported on the reference's actions reaches only states the
    // reference reaches, so this mask is exactly absolute continuity
    let mask: Vec<bool> = (0..n * na)
        .map(|i| {
            let (s, a) = (i / na, i % na);
            let row: f64 = reference.matrix().row(s).sum();
            if row > 0.0 {
                reference.get(s, a) / row >= SUPPORT_CUTOFF
            } else {
                true
            }
        })
        .collect();
    let constrained = cmdp.with_thresholds(thresholds.to_vec())?;
    match solve_cmdp_with(&constrained, Some(&mask)) {
        Ok(_) => {}
        Err(Error::Infeasible { .. }) => return Ok(None),
        Err(e) => return Err(e),
    }
    let zero = DMatrix::zeros(n, na);
    let dist = EmpiricalDistribution::from_occupancy(&cmdp.with_reward(zero)?, reference)?;
    let cfg = SolverConfig {
        alpha: 1.0,
        fdiv: FDivergence::ChiSquare,
        lambda_max: 1e9,
        ..SolverConfig::default()
    };
    let sol = optimize_naive(&dist, thresholds, &cfg)?;
    if !sol.diagnostics.converged {
        return Ok(None);
    }
    let total = reference.total();
    let d = reference.matrix().component_mul(&sol.w) / total;
    Ok(Some(OccupancyMeasure::new(d)?))
}

/// Extends `policy` from an occupancy, keeping `fallback` rows on states
/// without mass.
fn policy_from(d: &OccupancyMeasure, fallback: &TabularPolicy) -> Result<TabularPolicy> {
    TabularPolicy::from_weights(d.matrix(), fallback)
}

struct Softened {
    policy: TabularPolicy,
    reward: f64,
}

/// Soften at `tau`, project, and evaluate; `None` when the projection is
/// infeasible or misses the cost target.
fn soften_and_project(cmdp: &Cmdp, q: &DMatrix<f64>, tau: f64, target: &[f64]) -> Result<Option<Softened>> {
    let soft = softmax_policy(q, tau)?;
    let reference = stationary_distribution(cmdp, &soft)?;
    let Some(d) = project_occupancy(cmdp, &reference, target)? else {
        return Ok(None);
    };
    let policy = policy_from(&d, &soft)?;
    let values = policy_values(cmdp, &policy)?;
    if values.cost_values.iter().zip(target).any(|(v, t)| *v > t + COST_SLACK) {
        return Ok(None);
    }
    Ok(Some(Softened {
        reward: values.reward_value,
        policy,
    }))
}

/// Logging policy whose reward sits at `0.9 V* + 0.1 V_unif` and whose
/// cost is at most `target_cost` (per cost function).
///
/// The temperature grows geometrically until the projected softmax policy
/// first reaches the reward level; the crossing is then refined by
/// bisection on `log tau` so the level is hit rather than overshot.
pub fn build_data_policy(cmdp: &Cmdp, target_cost: f64) -> Result<TabularPolicy> {
    let target = vec![target_cost; cmdp.num_costs()];
    let (opt, q) = solve_mdp(cmdp, cmdp.reward())?;
    let v_opt = policy_values(cmdp, &opt)?.reward_value;
    let v_unif = policy_values(cmdp, &TabularPolicy::uniform(cmdp.num_states(), cmdp.num_actions()))?
        .reward_value;
    let level = 0.9 * v_opt + 0.1 * v_unif;

    let mut tau = TAU_START;
    let mut found = None;
    for _ in 0..ALGORITHM_GUARD {
        if let Some(p) = soften_and_project(cmdp, &q, tau, &target)? {
            if p.reward <= level {
                found = Some(p);
                break;
            }
        }
        tau *= TAU_GROWTH;
    }
    let Some(mut best) = found else {
        return Err(Error::IterationLimit(format!(
            "data policy did not reach the reward level within {ALGORITHM_GUARD} temperatures"
        )));
    };
    if tau == TAU_START {
        return Ok(best.policy);
    }
    let (mut lo, mut hi) = ((tau / TAU_GROWTH).ln(), tau.ln());
    for _ in 0..100 {
        if level - best.reward <= LEVEL_TOL || hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match soften_and_project(cmdp, &q, mid.exp(), &target)? {
            Some(p) if p.reward <= level => {
                hi = mid;
                best = p;
            }
            _ => lo = mid,
        }
    }
    Ok(best.policy)
}

/// Logging policy restricted to `action_subset`: `0.9` times the
/// restricted constrained optimum plus `0.1` times uniform over the subset,
/// with the solver's threshold lowered by factors of 0.99 until the mixture
/// meets `target_cost`.
pub fn build_limited_policy(cmdp: &Cmdp, action_subset: &[usize], target_cost: f64) -> Result<TabularPolicy> {
    let (n, na) = (cmdp.num_states(), cmdp.num_actions());
    if action_subset.is_empty() || !action_subset.contains(&0) {
        return Err(Error::InvalidArgument(
            "action subset must be nonempty and contain the first action".into(),
        ));
    }
    if let Some(a) = action_subset.iter().find(|&&a| a >= na) {
        return Err(Error::InvalidArgument(format!("action {a} out of range")));
    }
    let inside = |a: usize| action_subset.contains(&a);
    let mask: Vec<bool> = (0..n * na).map(|i| inside(i % na)).collect();
    let k = action_subset.iter().collect::<std::collections::BTreeSet<_>>().len() as f64;
    let uniform = TabularPolicy::new(DMatrix::from_fn(n, na, |_, a| if inside(a) { 1.0 / k } else { 0.0 }))?;

    let mut rho = 1.0;
    for _ in 0..ALGORITHM_GUARD {
        if rho < RHO_MIN {
            break;
        }
        let reduced = cmdp.with_thresholds(vec![target_cost * rho; cmdp.num_costs()])?;
        let solved = match solve_cmdp_with(&reduced, Some(&mask)) {
            Ok(sol) => Some(sol.policy),
            Err(Error::Infeasible { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(opt) = solved {
            let policy = opt.mix(&uniform, LIMITED_MIX)?;
            let values = policy_values(cmdp, &policy)?;
            if values.cost_values.iter().all(|&v| v <= target_cost + COST_SLACK) {
                return Ok(policy);
            }
        }
        rho *= RHO_DECAY;
    }
    Err(Error::IterationLimit(format!(
        "limited-support policy could not meet cost {target_cost} before the threshold factor fell below {RHO_MIN}"
    )))
}
