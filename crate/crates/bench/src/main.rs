use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coptidice::cmdp::format::{read_cmdp, write_cmdp, write_policy};
use coptidice::cmdp::{policy_values, random_cmdp, GenParams};
use coptidice::datagen::{read_dataset, write_dataset, EmpiricalDistribution};
use coptidice::dice::format::write_dual;
use coptidice::dice::FallbackRule;
use coptidice_bench::config::{
    data_policy, parse_action_subset, parse_weighting, Algorithm, ExperimentConfig, SolverSettings,
    FULL_RUNS, FULL_TRAJECTORIES,
};
use coptidice_bench::error::{BenchError, Result};
use coptidice_bench::experiment::{derive_seed, run_experiment, solve_algorithm, DataPolicies};
use coptidice_bench::results::{aggregate, format_summary, read_results, write_results};

/// Offline constrained RL on tabular CMDPs.
#[derive(Parser)]
#[command(name = "coptidice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random CMDP.
    GenCmdp(GenCmdpArgs),
    /// Sample a dataset from a CMDP under a constructed logging policy.
    GenData(GenDataArgs),
    /// Run one offline algorithm on a dataset and write its policy.
    Solve(SolveArgs),
    /// Run the benchmark sweep and write result rows as CSV.
    Bench(BenchArgs),
    /// Summarize a results CSV per algorithm, N and threshold.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct GenCmdpArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    states: usize,
    #[arg(long, default_value_t = 4)]
    actions: usize,
    #[arg(long, default_value_t = 0.95)]
    discount: f64,
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    cmdp: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trajectories: usize,
    /// True cost of the logging policy.
    #[arg(long, default_value_t = 0.09)]
    target_cost: f64,
    /// Mixture weight of the first of two full-support policies.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.11)]
    second_target_cost: f64,
    /// Limited-support logging policy over these 1-based actions, e.g. `1,2`.
    #[arg(long)]
    action_subset: Option<String>,
    /// Also write the logging policy (single policies only).
    #[arg(long)]
    policy_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// The model the data came from; sets the dimensions and discount and
    /// is used to report true values.
    #[arg(long)]
    cmdp: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "coptidice")]
    algorithm: Algorithm,
    /// Cost threshold; defaults to the model's.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "uniform")]
    weighting: String,
    #[arg(long, default_value = "uniform")]
    fallback: FallbackRule,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dual variables of the coptidice solvers.
    #[arg(long)]
    dual_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML experiment file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated trajectory counts.
    #[arg(long, value_delimiter = ',')]
    trajectories: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long, value_delimiter = ',')]
    threshold: Option<Vec<f64>>,
    #[arg(long)]
    target_cost: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    second_target_cost: Option<f64>,
    #[arg(long)]
    action_subset: Option<String>,
    #[arg(long)]
    fallback: Option<FallbackRule>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Record wall time per cell (breaks byte-for-byte reproducibility).
    #[arg(long)]
    timing: bool,
    /// 10,000 runs over the eight trajectory counts of the full study.
    #[arg(long)]
    full_scale: bool,
    /// Also print the summary table.
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct AggregateArgs {
    results: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_cmdp(a: GenCmdpArgs) -> Result<()> {
    let params = GenParams {
        num_states: a.states,
        num_actions: a.actions,
        discount: a.discount,
        threshold: a.threshold,
        ..GenParams::default()
    };
    let m = random_cmdp(a.seed, &params)?;
    emit(a.out.as_deref(), &write_cmdp(&m))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let m = read_cmdp(&read(&a.cmdp)?)?;
    let limited = a.action_subset.as_deref().map(parse_action_subset).transpose()?;
    let spec = data_policy(a.target_cost, limited, a.beta, a.second_target_cost)?;
    spec.validate()?;
    let policies = DataPolicies::build(&m, &spec)?;
    let mut ds = policies.sample(&m, a.trajectories, |side| derive_seed(a.seed, 0, side))?;
    ds.meta.policy = spec.label();
    if let Some(p) = &a.policy_out {
        match &policies {
            DataPolicies::Single(pi) => fs::write(p, write_policy(pi))?,
            DataPolicies::Mixture(..) => {
                return Err(BenchError::Config("--policy-out needs a single logging policy".into()))
            }
        }
    }
    let v = policies.values(&m)?;
    eprintln!("data policy {}: reward {:.6} cost {:.6}", spec.label(), v.reward_value, v.cost_values[0]);
    emit(a.out.as_deref(), &write_dataset(&ds))
}

fn solve(a: SolveArgs) -> Result<()> {
    let m = read_cmdp(&read(&a.cmdp)?)?;
    let ds = read_dataset(&read(&a.data)?)?;
    ds.check_against(&m)?;
    let thresholds = match a.threshold {
        Some(t) => vec![t; m.num_costs()],
        None => m.thresholds().to_vec(),
    };
    let dist = EmpiricalDistribution::from_dataset(
        &ds,
        m.num_states(),
        m.num_actions(),
        m.discount(),
        parse_weighting(&a.weighting)?,
    )?;
    let out = solve_algorithm(
        a.algorithm,
        &dist,
        &thresholds,
        ds.num_episodes(),
        &SolverSettings::default(),
        a.fallback,
    )?;
    if let Some(p) = &a.dual_out {
        let dual = out
            .dual
            .as_ref()
            .ok_or_else(|| BenchError::Config(format!("{} has no dual variables", a.algorithm)))?;
        fs::write(p, write_dual(dual))?;
    }
    let v = policy_values(&m, &out.policy)?;
    eprintln!(
        "{}: true reward {:.6} true cost {:.6} converged {} iterations {}",
        a.algorithm, v.reward_value, v.cost_values[0], out.converged, out.iterations
    );
    emit(a.out.as_deref(), &write_policy(&out.policy))
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_toml(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if a.full_scale {
        cfg.runs = FULL_RUNS;
        cfg.trajectories = FULL_TRAJECTORIES.to_vec();
    }
    if let Some(v) = a.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = a.runs {
        cfg.runs = v;
    }
    if let Some(v) = a.trajectories {
        cfg.trajectories = v;
    }
    if let Some(v) = a.algorithms {
        cfg.algorithms = v;
    }
    if let Some(v) = a.threshold {
        cfg.thresholds = v;
    }
    if a.target_cost.is_some() || a.beta.is_some() || a.action_subset.is_some() || a.second_target_cost.is_some() {
        let (first, second) = match &cfg.data_policy.mixture {
            Some(m) => (m.first.target_cost, m.second.target_cost),
            None => (cfg.data_policy.target_cost, 0.11),
        };
        let limited = match a.action_subset.as_deref() {
            Some(text) => Some(parse_action_subset(text)?),
            None => cfg.data_policy.action_subset.clone(),
        };
        let beta = a.beta.or(cfg.data_policy.mixture.as_ref().map(|m| m.beta));
        cfg.data_policy = data_policy(
            a.target_cost.unwrap_or(first),
            limited,
            beta,
            a.second_target_cost.unwrap_or(second),
        )?;
    }
    if let Some(v) = a.fallback {
        cfg.fallback = v;
    }
    if let Some(v) = a.parallelism {
        cfg.parallelism = v;
    }
    if a.timing {
        cfg.timing = true;
    }
    if let Some(p) = a.out {
        cfg.out = Some(p);
    }
    let rows = run_experiment(&cfg)?;
    emit(cfg.out.as_deref(), &write_results(&rows)?)?;
    if a.summary {
        eprint!("{}", format_summary(&aggregate(&rows)));
    }
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let rows = read_results(&read(&a.results)?)?;
    if rows.is_empty() {
        return Err(BenchError::Schema("no result rows".into()));
    }
    print!("{}", format_summary(&aggregate(&rows)));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCmdp(a) => gen_cmdp(a),
        Command::GenData(a) => gen_data(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Aggregate(a) => aggregate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
