//! Generates one instance and compares the flow heuristic with the exact
//! optimum.
//!
//! cargo run --release --example solve_instance -- 3 6 42

use gdsg::model::{check_feasible, generate_instance, GenConfig};
use gdsg::solvers::{exact_solve, heuristic_best, HeuristicConfig, DEFAULT_BUDGET};

fn main() -> anyhow::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let (k, m, seed) = match args[..] {
        [k, m, s] => (k as usize, m as usize, s),
        _ => (3, 6, 42),
    };
    let inst = generate_instance(&GenConfig::new(k, m), seed)?;
    println!("{k} servers, {m} users, {} candidate edges", inst.num_edges());
    println!("all local: {:.4}", gdsg::model::objective(&inst, &inst.all_local())?);

    for r in [1, 8, 32] {
        let h = heuristic_best(&inst, &HeuristicConfig::with_restarts(r, seed))?;
        println!("heuristic R={r:<2}: {:.4} ({} offloaded)", h.cost, h.solution.offload_count());
    }
    let exact = exact_solve(&inst, true, DEFAULT_BUDGET)?;
    assert!(check_feasible(&inst, &exact.solution)?.is_empty());
    println!("exact:          {:.4} ({} offloaded)", exact.cost, exact.solution.offload_count());
    for (i, e) in inst.edges.iter().enumerate() {
        if exact.solution.decisions[i] {
            println!("  user {} -> server {} with share {:.3}", e.user, e.server, exact.solution.allocations[i]);
        }
    }
    Ok(())
}
