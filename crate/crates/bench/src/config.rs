//! Experiment configuration and its TOML form.
//!
//! Every key is optional; missing keys take the defaults below (desk scale
//! of the random-CMDP study).
//!
//! ```toml
//! [experiment]
//! runs = 200
//! trajectories = [10, 100, 1000]
//! thresholds = [0.1]            # `threshold = 0.1` is accepted as well
//! algorithms = ["bc", "baseline", "c-spibb", "coptidice-naive", "coptidice"]
//! seed = 0
//! parallelism = 1               # 0 means one worker per CPU
//! out = "results.csv"
//! timing = false                # adds a wall_ms column (not reproducible)
//!
//! [cmdp]
//! states = 50
//! actions = 4
//! discount = 0.95
//! connectivity = 4
//!
//! [data]
//! mode = "full-support"         # or "limited-support"
//! target_cost = 0.09
//! action_subset = [1, 2]        # 1-based action labels, limited mode only
//! beta = 0.8                    # present: mixture of two full-support policies
//! second_target_cost = 0.11     # target of the second mixture component
//! weighting = "uniform"         # or "discounted"
//! fallback = "uniform"          # or "action-marginal"
//!
//! [solver]
//! alpha_scale = 1.0             # alpha = alpha_scale / N
//! epsilon_scale = 0.1           # epsilon = epsilon_scale / N
//! divergence = "chi2"           # or "kl"
//! optimizer = "newton"          # or "gradient-descent"
//! lambda_max = 1000.0
//! max_iterations = 50000
//! tolerance = 1e-8
//! n_wedge = 5
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use coptidice::cmdp::GenParams;
use coptidice::datagen::{DataPolicySpec, Weighting};
use coptidice::dice::{FDivergence, FallbackRule, Optimizer, SolverConfig};
use serde::Deserialize;

use crate::error::{BenchError, Result};

/// Trajectory counts of the full protocol.
pub const FULL_TRAJECTORIES: [usize; 8] = [10, 20, 50, 100, 200, 500, 1000, 2000];
pub const FULL_RUNS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Bc,
    Baseline,
    CSpibb,
    CoptidiceNaive,
    Coptidice,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Bc,
        Algorithm::Baseline,
        Algorithm::CSpibb,
        Algorithm::CoptidiceNaive,
        Algorithm::Coptidice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bc => "bc",
            Self::Baseline => "baseline",
            Self::CSpibb => "c-spibb",
            Self::CoptidiceNaive => "coptidice-naive",
            Self::Coptidice => "coptidice",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Solver knobs shared by every cell; `alpha` and `epsilon` scale with `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub alpha_scale: f64,
    pub epsilon_scale: f64,
    pub divergence: FDivergence,
    pub optimizer: Optimizer,
    pub lambda_max: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub n_wedge: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            alpha_scale: 1.0,
            epsilon_scale: 0.1,
            divergence: FDivergence::ChiSquare,
            optimizer: Optimizer::Newton,
            lambda_max: base.lambda_max,
            max_iterations: base.max_iterations,
            tolerance: base.tolerance,
            n_wedge: 5,
        }
    }
}

impl SolverSettings {
    /// Solver configuration for a dataset of `n` trajectories.
    pub fn for_episodes(&self, n: usize) -> SolverConfig {
        let n = n.max(1) as f64;
        SolverConfig {
            alpha: self.alpha_scale / n,
            epsilon: self.epsilon_scale / n,
            fdiv: self.divergence,
            optimizer: self.optimizer,
            lambda_max: self.lambda_max,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub trajectories: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub master_seed: u64,
    pub parallelism: usize,
    pub out: Option<PathBuf>,
    pub timing: bool,
    pub generator: GenParams,
    pub data_policy: DataPolicySpec,
    pub weighting: Weighting,
    pub fallback: FallbackRule,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 200,
            trajectories: vec![10, 100, 1000],
            thresholds: vec![0.1],
            algorithms: Algorithm::ALL.to_vec(),
            master_seed: 0,
            parallelism: 1,
            out: None,
            timing: false,
            generator: GenParams::default(),
            data_policy: DataPolicySpec::full_support(0.09),
            weighting: Weighting::Uniform,
            fallback: FallbackRule::Uniform,
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if self.trajectories.is_empty() || self.trajectories.contains(&0) {
            return bad("trajectory counts must be positive");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
            return bad("thresholds must be >= 0");
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required");
        }
        let s = &self.solver;
        if !(s.alpha_scale > 0.0) || !(s.epsilon_scale >= 0.0) || !(s.lambda_max > 0.0) || !(s.tolerance > 0.0) {
            return bad("solver scales, lambda_max and tolerance must be positive");
        }
        if let Some(sub) = &self.data_policy.action_subset {
            if sub.iter().any(|&a| a >= self.generator.num_actions) {
                return bad("action subset names an action outside the model");
            }
        }
        self.generator.validate()?;
        self.data_policy.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        raw.into_config()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    cmdp: RawCmdp,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    solver: RawSolver,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    runs: Option<usize>,
    trajectories: Option<Vec<usize>>,
    threshold: Option<f64>,
    thresholds: Option<Vec<f64>>,
    algorithms: Option<Vec<String>>,
    seed: Option<u64>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
    timing: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCmdp {
    states: Option<usize>,
    actions: Option<usize>,
    discount: Option<f64>,
    connectivity: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    mode: Option<String>,
    target_cost: Option<f64>,
    action_subset: Option<Vec<usize>>,
    beta: Option<f64>,
    second_target_cost: Option<f64>,
    weighting: Option<String>,
    fallback: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    alpha_scale: Option<f64>,
    epsilon_scale: Option<f64>,
    divergence: Option<String>,
    optimizer: Option<String>,
    lambda_max: Option<f64>,
    max_iterations: Option<usize>,
    tolerance: Option<f64>,
    n_wedge: Option<usize>,
}

/// Parses 1-based action labels such as `1,2`.
pub fn parse_action_subset(text: &str) -> Result<Vec<usize>> {
    let labels = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| BenchError::Config(format!("bad action label `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    labels_to_indices(&labels)
}

fn labels_to_indices(labels: &[usize]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = labels
        .iter()
        .map(|&l| {
            l.checked_sub(1)
                .ok_or_else(|| BenchError::Config("action labels start at 1".into()))
        })
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn parse_weighting(s: &str) -> Result<Weighting> {
    match s {
        "uniform" => Ok(Weighting::Uniform),
        "discounted" => Ok(Weighting::Discounted),
        _ => Err(BenchError::Config(format!("unknown weighting `{s}`"))),
    }
}

pub fn parse_optimizer(s: &str) -> Result<Optimizer> {
    match s {
        "newton" => Ok(Optimizer::Newton),
        "gradient-descent" => Ok(Optimizer::GradientDescent),
        _ => Err(BenchError::Config(format!("unknown optimizer `{s}`"))),
    }
}

/// Builds the data-policy spec from its parts; `beta` selects a mixture of
/// two full-support policies.
pub fn data_policy(
    target_cost: f64,
    limited: Option<Vec<usize>>,
    beta: Option<f64>,
    second_target_cost: f64,
) -> Result<DataPolicySpec> {
    let spec = match (beta, limited) {
        (Some(_), Some(_)) => {
            return Err(BenchError::Config(
                "mixtures of limited-support policies are not supported".into(),
            ))
        }
        (Some(beta), None) => DataPolicySpec::mixture(
            DataPolicySpec::full_support(target_cost),
            DataPolicySpec::full_support(second_target_cost),
            beta,
        ),
        (None, Some(sub)) => DataPolicySpec::limited(sub, target_cost),
        (None, None) => DataPolicySpec::full_support(target_cost),
    };
    Ok(spec)
}

impl RawConfig {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let e = self.experiment;
        if let Some(v) = e.runs {
            cfg.runs = v;
        }
        if let Some(v) = e.trajectories {
            cfg.trajectories = v;
        }
        match (e.threshold, e.thresholds) {
            (Some(_), Some(_)) => {
                return Err(BenchError::Config("give `threshold` or `thresholds`, not both".into()))
            }
            (Some(t), None) => cfg.thresholds = vec![t],
            (None, Some(ts)) => cfg.thresholds = ts,
            (None, None) => {}
        }
        if let Some(names) = e.algorithms {
            cfg.algorithms = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = e.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = e.parallelism {
            cfg.parallelism = v;
        }
        cfg.out = e.out;
        cfg.timing = e.timing.unwrap_or(false);

        let c = self.cmdp;
        let g = &mut cfg.generator;
        g.num_states = c.states.unwrap_or(g.num_states);
        g.num_actions = c.actions.unwrap_or(g.num_actions);
        g.discount = c.discount.unwrap_or(g.discount);
        g.connectivity = c.connectivity.unwrap_or(g.connectivity);

        let d = self.data;
        let limited = match d.mode.as_deref() {
            None | Some("full-support") => {
                if d.action_subset.is_some() {
                    return Err(BenchError::Config("action_subset needs mode = \"limited-support\"".into()));
                }
                None
            }
            Some("limited-support") => Some(labels_to_indices(&d.action_subset.unwrap_or_else(|| vec![1]))?),
            Some(other) => return Err(BenchError::Config(format!("unknown data mode `{other}`"))),
        };
        cfg.data_policy = data_policy(
            d.target_cost.unwrap_or(0.09),
            limited,
            d.beta,
            d.second_target_cost.unwrap_or(0.11),
        )?;
        if let Some(w) = d.weighting {
            cfg.weighting = parse_weighting(&w)?;
        }
        if let Some(f) = d.fallback {
            cfg.fallback = f.parse()?;
        }

        let s = self.solver;
        let t = &mut cfg.solver;
        t.alpha_scale = s.alpha_scale.unwrap_or(t.alpha_scale);
        t.epsilon_scale = s.epsilon_scale.unwrap_or(t.epsilon_scale);
        if let Some(v) = s.divergence {
            t.divergence = v.parse()?;
        }
        if let Some(v) = s.optimizer {
            t.optimizer = parse_optimizer(&v)?;
        }
        t.lambda_max = s.lambda_max.unwrap_or(t.lambda_max);
        t.max_iterations = s.max_iterations.unwrap_or(t.max_iterations);
        t.tolerance = s.tolerance.unwrap_or(t.tolerance);
        t.n_wedge = s.n_wedge.unwrap_or(t.n_wedge);

        cfg.validate()?;
        Ok(cfg)
    }
}
