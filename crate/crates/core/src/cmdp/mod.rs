//! Finite CMDP models, exact evaluation, generation and planning.

mod eval;
pub mod format;
mod generate;
mod model;
mod solve;

pub use eval::{
    normalized_reward, policy_q_values, policy_values, solve_mdp, state_transition_matrix,
    state_values, stationary_distribution, values_from_occupancy, VI_TOL,
};
pub use generate::{hardest_goal, random_cmdp, random_dense_cmdp, GenParams, GENERATOR_VERSION};
pub use model::{Cmdp, OccupancyMeasure, PolicyValues, TabularPolicy, PROB_TOL};
pub use solve::{ActionMask, 
    min_cost_policy, solve_cmdp, solve_cmdp_for_reward, solve_cmdp_with, CmdpSolution, COST_TOL,
    GAP_TOL,
};
