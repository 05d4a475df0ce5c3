//! Exhaustive solvers.
//!
//! [`exact_solve`] enumerates every assignment that satisfies the one-server-
//! per-user constraint and solves the allocation subproblem of each in closed
//! form: for the tasks offloaded to a server, minimizing `sum c_j / A_j` with
//! `sum A_j = 1` gives `A_i = sqrt(c_i) / sum_j sqrt(c_j)` and an optimal
//! value of `(sum_j sqrt(c_j))^2`.

use crate::error::{GdsgError, Result};
use crate::model::{objective, OffloadInstance, Solution};

pub const DEFAULT_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub solution: Solution,
    pub cost: f64,
}

/// Per-user candidate edges that may be offloaded.
fn candidates(inst: &OffloadInstance, offload_requires_rho: bool) -> Vec<Vec<usize>> {
    inst.edges_by_user()
        .into_iter()
        .map(|edges| {
            edges
                .into_iter()
                .filter(|&i| !offload_requires_rho || inst.edge_features[i].rho > 0.0)
                .collect()
        })
        .collect()
}

/// Number of assignments `prod_j (1 + |options_j|)`, saturating.
pub fn combination_count(options: &[Vec<usize>]) -> u128 {
    options
        .iter()
        .fold(1u128, |acc, o| acc.saturating_mul(1 + o.len() as u128))
}

fn check_budget(options: &[Vec<usize>], budget: u128) -> Result<()> {
    let combinations = combination_count(options);
    if combinations > budget {
        return Err(GdsgError::BudgetExceeded {
            combinations,
            budget,
        });
    }
    Ok(())
}

/// The objective charges `c_local` on every edge that is not offloaded, so a
/// user with `d` edges pays `d * c_local` locally and `(d - 1) * c_local` plus
/// the offload cost otherwise.
fn local_terms(inst: &OffloadInstance) -> (Vec<f64>, Vec<f64>) {
    inst.edges_by_user()
        .iter()
        .map(|e| {
            let c = inst.edge_features[e[0]].c_local;
            let d = e.len() as f64;
            (d * c, (d - 1.0) * c)
        })
        .unzip()
}

/// Closed-form optimal split of a server across its offloaded edges.
pub fn sqrt_allocation(costs: &[f64]) -> Vec<f64> {
    let total: f64 = costs.iter().map(|c| c.sqrt()).sum();
    costs.iter().map(|c| c.sqrt() / total).collect()
}

struct Search<'a> {
    inst: &'a OffloadInstance,
    options: &'a [Vec<usize>],
    /// Cost of running the user's task locally on every outgoing edge.
    local_cost: Vec<f64>,
    /// Local cost still paid on the other edges when one edge offloads.
    local_rest: Vec<f64>,
    sqrt_offload: Vec<f64>,
    server_sqrt_sum: Vec<f64>,
    choice: Vec<Option<usize>>,
    best_cost: f64,
    best_choice: Vec<Option<usize>>,
}

impl Search<'_> {
    fn run(&mut self, user: usize, partial: f64) {
        if user == self.options.len() {
            let total = partial + self.server_sqrt_sum.iter().map(|s| s * s).sum::<f64>();
            if total < self.best_cost {
                self.best_cost = total;
                self.best_choice.clone_from(&self.choice);
            }
            return;
        }
        self.choice[user] = None;
        self.run(user + 1, partial + self.local_cost[user]);
        for idx in 0..self.options[user].len() {
            let i = self.options[user][idx];
            let server = self.inst.edges[i].server;
            let saved = self.server_sqrt_sum[server];
            self.server_sqrt_sum[server] += self.sqrt_offload[i];
            self.choice[user] = Some(i);
            let step = self.local_rest[user] + self.inst.edge_features[i].c_trans;
            self.run(user + 1, partial + step);
            self.server_sqrt_sum[server] = saved;
        }
        self.choice[user] = None;
    }
}

/// Globally optimal solution by enumeration of the discrete decisions.
pub fn exact_solve(
    inst: &OffloadInstance,
    offload_requires_rho: bool,
    budget: u128,
) -> Result<ExactResult> {
    let options = candidates(inst, offload_requires_rho);
    check_budget(&options, budget)?;
    let (local_cost, local_rest) = local_terms(inst);
    let mut search = Search {
        inst,
        options: &options,
        local_cost,
        local_rest,
        sqrt_offload: inst
            .edge_features
            .iter()
            .map(|f| f.c_offload_full.sqrt())
            .collect(),
        server_sqrt_sum: vec![0.0; inst.num_servers],
        choice: vec![None; inst.num_users],
        best_cost: f64::INFINITY,
        best_choice: vec![None; inst.num_users],
    };
    search.run(0, 0.0);
    let best_choice = search.best_choice;

    let mut decisions = vec![false; inst.num_edges()];
    for &i in best_choice.iter().flatten() {
        decisions[i] = true;
    }
    let mut allocations = vec![0.0; inst.num_edges()];
    for edges in inst.edges_by_server() {
        let chosen: Vec<usize> = edges.into_iter().filter(|&i| decisions[i]).collect();
        let costs: Vec<f64> = chosen
            .iter()
            .map(|&i| inst.edge_features[i].c_offload_full)
            .collect();
        for (&i, a) in chosen.iter().zip(sqrt_allocation(&costs)) {
            allocations[i] = a;
        }
    }
    let solution = Solution {
        decisions,
        allocations,
    };
    let cost = objective(inst, &solution)?;
    Ok(ExactResult { solution, cost })
}

/// Brute force over the discrete decisions with the allocation held fixed.
/// Test oracle for the min-cost flow solver.
pub fn exhaustive_over_d_with_fixed_a(
    inst: &OffloadInstance,
    alloc: &[f64],
    offload_requires_rho: bool,
    budget: u128,
) -> Result<ExactResult> {
    let options = candidates(inst, offload_requires_rho);
    check_budget(&options, budget)?;
    let (local, local_rest) = local_terms(inst);
    let mut best_cost = f64::INFINITY;
    let mut best = vec![None; inst.num_users];
    let mut odometer = vec![0usize; inst.num_users];
    loop {
        let mut choice = Vec::with_capacity(inst.num_users);
        let mut load = vec![0.0; inst.num_servers];
        let mut cost = 0.0;
        for (user, &digit) in odometer.iter().enumerate() {
            if digit == 0 {
                choice.push(None);
                cost += local[user];
            } else {
                let i = options[user][digit - 1];
                let f = &inst.edge_features[i];
                choice.push(Some(i));
                load[inst.edges[i].server] += alloc[i];
                cost += local_rest[user] + f.c_trans + f.c_offload_full / alloc[i];
            }
        }
        let fits = load.iter().all(|&l| l <= 1.0 + crate::model::CAPACITY_SLACK);
        if fits && cost < best_cost {
            best_cost = cost;
            best = choice;
        }
        // advance the mixed-radix counter
        let mut pos = 0;
        loop {
            if pos == odometer.len() {
                let mut decisions = vec![false; inst.num_edges()];
                for &i in best.iter().flatten() {
                    decisions[i] = true;
                }
                let solution = Solution {
                    decisions,
                    allocations: alloc.to_vec(),
                };
                let cost = objective(inst, &solution)?;
                return Ok(ExactResult { solution, cost });
            }
            odometer[pos] += 1;
            if odometer[pos] <= options[pos].len() {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, Edge, GenConfig, RawEdgeParams, SystemParams};

    fn raw(cycles: f64, tau: f64) -> RawEdgeParams {
        RawEdgeParams {
            input_bits: 1e6,
            cycles,
            local_cps: 1e9,
            alpha: 0.5,
            channel_gain: 0.9,
            tau_max: tau,
        }
    }

    #[test]
    fn single_pair_is_min_of_two_options() {
        let inst = OffloadInstance::from_raw(
            1,
            1,
            vec![Edge { user: 0, server: 0 }],
            vec![raw(1e9, 5.0)],
            SystemParams::default(),
        )
        .unwrap();
        let f = inst.edge_features[0];
        let r = exact_solve(&inst, true, DEFAULT_BUDGET).unwrap();
        let expected = f.c_local.min(f.c_trans + f.c_offload_full);
        assert_eq!(r.cost, expected);
        if r.solution.decisions[0] {
            assert_eq!(r.solution.allocations[0], 1.0);
        }
    }

    #[test]
    fn equal_costs_split_evenly() {
        assert_eq!(sqrt_allocation(&[0.3, 0.3]), vec![0.5, 0.5]);
    }

    #[test]
    fn budget_is_enforced() {
        let mut cfg = GenConfig::new(3, 12);
        cfg.degree_min = 3;
        let inst = generate_instance(&cfg, 1).unwrap();
        let err = exact_solve(&inst, false, 1000).unwrap_err();
        assert!(matches!(
            err,
            GdsgError::BudgetExceeded {
                combinations: 16_777_216,
                ..
            }
        ));
    }

    #[test]
    fn rho_gate_forces_local() {
        // deadlines far below any achievable offload time
        let edges = vec![Edge { user: 0, server: 0 }, Edge { user: 0, server: 1 }];
        let inst = OffloadInstance::from_raw(
            2,
            1,
            edges,
            vec![raw(1e9, 1e-3), raw(1e9, 1e-3)],
            SystemParams::default(),
        )
        .unwrap();
        assert!(inst.edge_features.iter().all(|f| f.rho == 0.0));
        let r = exact_solve(&inst, true, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.solution, inst.all_local());
        let fixed = exhaustive_over_d_with_fixed_a(&inst, &[1.0, 1.0], true, DEFAULT_BUDGET).unwrap();
        assert_eq!(fixed.solution.offload_count(), 0);
    }

    #[test]
    fn single_user_fixed_allocation_matches_direct_min() {
        let mut cfg = GenConfig::new(4, 1);
        cfg.degree_min = 4;
        cfg.degree_max = 4;
        for seed in 0..20 {
            let inst = generate_instance(&cfg, seed).unwrap();
            let alloc = vec![0.7; inst.num_edges()];
            let r = exhaustive_over_d_with_fixed_a(&inst, &alloc, false, DEFAULT_BUDGET).unwrap();
            // every non-offloaded edge pays the local cost
            let c_local = inst.edge_features[0].c_local;
            let rest = 3.0 * c_local;
            let direct = inst
                .edge_features
                .iter()
                .map(|f| rest + f.c_trans + f.c_offload_full / 0.7)
                .fold(4.0 * c_local, f64::min);
            assert!((r.cost - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn closed_form_satisfies_stationarity() {
        let gen = GenConfig::new(3, 6);
        for seed in 0..50 {
            let inst = generate_instance(&gen, seed).unwrap();
            let r = exact_solve(&inst, true, DEFAULT_BUDGET).unwrap();
            for edges in inst.edges_by_server() {
                let marg: Vec<f64> = edges
                    .iter()
                    .filter(|&&i| r.solution.decisions[i])
                    .map(|&i| {
                        inst.edge_features[i].c_offload_full / r.solution.allocations[i].powi(2)
                    })
                    .collect();
                for w in marg.windows(2) {
                    assert!((w[0] - w[1]).abs() <= 1e-9 * w[0].abs().max(1.0));
                }
            }
        }
    }
}
