use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{build_flow_network, mcmf_solve};
use crate::error::{GdsgError, Result};
use crate::model::{objective, OffloadInstance, Solution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicConfig {
    /// Number of allocation restarts R. Round 0 always uses the unperturbed
    /// proportional rule.
    pub restarts: usize,
    /// Each edge weight is multiplied by a factor drawn from
    /// `[1 - perturbation, 1 + perturbation]` before renormalizing.
    pub perturbation: f64,
    pub seed: u64,
    pub offload_requires_rho: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            perturbation: 0.5,
            seed: 0,
            offload_requires_rho: true,
        }
    }
}

impl HeuristicConfig {
    pub fn with_restarts(restarts: usize, seed: u64) -> Self {
        Self {
            restarts,
            seed,
            ..Self::default()
        }
    }
}

/// Splits each server's compute across its incoming edges in proportion to
/// the task cycles, optionally scaled by random factors. Per-server shares
/// always sum to one.
pub fn heuristic_allocation(
    inst: &OffloadInstance,
    perturbation: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<f64> {
    let mut weights: Vec<f64> = inst.raw_params.iter().map(|r| r.cycles).collect();
    if let Some(rng) = rng {
        if perturbation > 0.0 {
            let p = perturbation.min(0.999);
            for w in &mut weights {
                *w *= rng.random_range(1.0 - p..=1.0 + p);
            }
        }
    }
    let mut alloc = vec![0.0; inst.num_edges()];
    for edges in inst.edges_by_server() {
        let total: f64 = edges.iter().map(|&i| weights[i]).sum();
        for &i in &edges {
            alloc[i] = weights[i] / total;
        }
    }
    alloc
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicResult {
    pub solution: Solution,
    pub cost: f64,
    /// Restart that produced the returned solution.
    pub round: usize,
}

/// Solves the offloading decision for a fixed allocation with min-cost flow.
pub fn solve_with_allocation(
    inst: &OffloadInstance,
    alloc: &[f64],
    offload_requires_rho: bool,
) -> Result<(Solution, f64)> {
    let net = build_flow_network(inst, alloc, offload_requires_rho)?;
    let flow = mcmf_solve(&net)?;
    let sol = flow.to_solution(alloc);
    let cost = objective(inst, &sol)?;
    Ok((sol, cost))
}

/// Best of `restarts` rounds of randomized allocation followed by min-cost
/// flow, ranked by the exact objective.
pub fn heuristic_best(inst: &OffloadInstance, cfg: &HeuristicConfig) -> Result<HeuristicResult> {
    if cfg.restarts < 1 {
        return Err(GdsgError::Config("heuristic restarts must be >= 1".into()));
    }
    let mut best: Option<HeuristicResult> = None;
    for round in 0..cfg.restarts {
        let alloc = if round == 0 {
            heuristic_allocation(inst, 0.0, None)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(round as u64);
            heuristic_allocation(inst, cfg.perturbation, Some(&mut rng))
        };
        let (solution, cost) = solve_with_allocation(inst, &alloc, cfg.offload_requires_rho)?;
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(HeuristicResult {
                solution,
                cost,
                round,
            });
        }
    }
    Ok(best.expect("at least one round"))
}
