use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::cmdp::TabularPolicy;
use crate::datagen::EmpiricalDistribution;
use crate::error::{Error, Result};

/// Row used for states where the data say nothing about the action choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FallbackRule {
    /// Uniform over all actions.
    #[default]
    Uniform,
    /// The dataset's overall action frequencies.
    ActionMarginal,
}

impl fmt::Display for FallbackRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::ActionMarginal => "action-marginal",
        })
    }
}

impl FromStr for FallbackRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "action-marginal" => Ok(Self::ActionMarginal),
            _ => Err(Error::InvalidArgument(format!("unknown fallback rule `{s}`"))),
        }
    }
}

/// Policy for unobserved states under `rule`, identical in every row.
pub fn unobserved_policy(dist: &EmpiricalDistribution, rule: FallbackRule) -> Result<TabularPolicy> {
    let (n, na) = (dist.num_states(), dist.num_actions());
    let uniform = TabularPolicy::uniform(n, na);
    match rule {
        FallbackRule::Uniform => Ok(uniform),
        FallbackRule::ActionMarginal => {
            let marginal: Vec<f64> = (0..na).map(|a| dist.sa_weight().column(a).sum()).collect();
            let weights = DMatrix::from_fn(n, na, |_, a| marginal[a]);
            TabularPolicy::from_weights(&weights, &uniform)
        }
    }
}

/// Fallback rows for [`extract_policy`]: the empirical behavior row on
/// observed states, `rule` elsewhere.
pub fn fallback_policy(dist: &EmpiricalDistribution, rule: FallbackRule) -> Result<TabularPolicy> {
    dist.behavior_policy(&unobserved_policy(dist, rule)?)
}

/// `pi(a | s) ~ d^D(s, a) w(s, a)`.
///
/// States where that mass vanishes keep the data's own action choice when
/// they were observed, and take `rule` otherwise, so the policy never puts
/// mass on an action the data never took in an observed state.
pub fn extract_policy(
    w: &DMatrix<f64>,
    dist: &EmpiricalDistribution,
    rule: FallbackRule,
) -> Result<TabularPolicy> {
    if w.shape() != dist.sa_weight().shape() {
        return Err(Error::InvalidArgument("weight table has the wrong shape".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("correction weights must be >= 0".into()));
    }
    let mass = dist.sa_weight().component_mul(w);
    TabularPolicy::from_weights(&mass, &fallback_policy(dist, rule)?)
}
