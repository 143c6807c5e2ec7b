//! Tabular stationary-distribution correction for constrained offline
//! policy optimization.

mod dual;
mod extract;
mod fdiv;
pub mod format;
mod solve;

pub use dual::{
    advantage, closed_form_w, dual_loss, Advantage, Diagnostics, DualSolution, Optimizer,
    SolverConfig,
};
pub use extract::{extract_policy, fallback_policy, unobserved_policy, FallbackRule};
pub use fdiv::FDivergence;
pub use solve::{check_solution, estimated_costs, optimize_conservative, optimize_naive};
