//! Heuristic and exhaustive solvers used for dataset labeling and as
//! runtime baselines.

pub mod exact;
pub mod flow;
pub mod heuristic;

pub use exact::{
    exact_solve, exhaustive_over_d_with_fixed_a, sqrt_allocation, ExactResult, DEFAULT_BUDGET,
};
pub use flow::{build_flow_network, mcmf_solve, scale_cost, FlowNetwork, FlowSolution};
pub use heuristic::{
    heuristic_allocation, heuristic_best, solve_with_allocation, HeuristicConfig, HeuristicResult,
};
