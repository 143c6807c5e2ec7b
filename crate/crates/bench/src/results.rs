//! CSV form of the result rows and the per-cell summary.
//!
//! The first line names the schema version; the CSV header follows.
//! Missing optional values are empty fields and failed cells carry `NaN`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{BenchError, Result};
use crate::experiment::ResultRow;

pub const RESULTS_HEADER: &str = "# coptidice-results 1";

pub fn write_results(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        // serde only emits the header alongside the first record
        w.write_record(COLUMNS)?;
    }
    let body = w.into_inner().map_err(|e| BenchError::Schema(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| BenchError::Schema(e.to_string()))?;
    Ok(format!("{RESULTS_HEADER}\n{body}"))
}

const COLUMNS: [&str; 19] = [
    "run_id",
    "cmdp_seed",
    "algorithm",
    "n_trajectories",
    "threshold",
    "data_policy",
    "data_reward",
    "data_cost",
    "optimal_reward",
    "reward",
    "normalized_reward",
    "cost",
    "satisfied",
    "converged",
    "iterations",
    "lambda",
    "cost_bound",
    "error",
    "wall_ms",
];

pub fn read_results(text: &str) -> Result<Vec<ResultRow>> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != RESULTS_HEADER {
        return Err(BenchError::Schema(format!("expected `{RESULTS_HEADER}` on the first line")));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(BenchError::Schema("unexpected column set".into()));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| BenchError::Schema(e.to_string())))
        .collect()
}

/// Mean and standard error (sample deviation over `sqrt(n)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Stat { mean, stderr, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub n_trajectories: usize,
    pub threshold: f64,
    /// Over rows with a defined normalized reward.
    pub normalized_reward: Option<Stat>,
    pub cost: Option<Stat>,
    pub violation_rate: f64,
    /// Rows whose normalization is undefined.
    pub degenerate: usize,
    pub failed: usize,
    pub rows: usize,
}

/// Groups rows by `(algorithm, N, threshold)` in first-appearance order of
/// the algorithm, then by `N` and threshold.  Failed cells count toward
/// `failed` only.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, u64), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let alg = match order.iter().position(|a| *a == row.algorithm) {
            Some(i) => i,
            None => {
                order.push(row.algorithm.clone());
                order.len() - 1
            }
        };
        groups
            .entry((alg, row.n_trajectories, row.threshold.to_bits()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((alg, n, _), group)| {
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.error.is_empty()).collect();
            let norm: Vec<f64> = ok.iter().filter_map(|r| r.normalized_reward).collect();
            let cost: Vec<f64> = ok.iter().map(|r| r.cost).collect();
            let violations = ok.iter().filter(|r| !r.satisfied).count();
            SummaryRow {
                algorithm: order[alg].clone(),
                n_trajectories: n,
                threshold: group[0].threshold,
                normalized_reward: Stat::of(&norm),
                cost: Stat::of(&cost),
                violation_rate: if ok.is_empty() { 0.0 } else { violations as f64 / ok.len() as f64 },
                degenerate: ok.len() - norm.len(),
                failed: group.len() - ok.len(),
                rows: group.len(),
            }
        })
        .collect()
}

/// Fixed-width table of a summary.
pub fn format_summary(summary: &[SummaryRow]) -> String {
    let stat = |s: &Option<Stat>| match s {
        Some(s) => format!("{:>9.4} ± {:<7.4}", s.mean, s.stderr),
        None => format!("{:>9}   {:<7}", "-", ""),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>9} {:>19} {:>19} {:>9} {:>5} {:>6} {:>5}",
        "algorithm", "N", "threshold", "normalized reward", "cost", "violation", "degen", "failed", "rows"
    );
    for r in summary {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>9.4} {} {} {:>9.3} {:>5} {:>6} {:>5}",
            r.algorithm,
            r.n_trajectories,
            r.threshold,
            stat(&r.normalized_reward),
            stat(&r.cost),
            r.violation_rate,
            r.degenerate,
            r.failed,
            r.rows
        );
    }
    out
}
