//! Hit-probability curves and the sample-count bound.

use gdsg::theory::{fig3_table, sample_lower_bound, BoundInput, BoundSpace, Fig3Grid};

fn main() -> anyhow::Result<()> {
    let grid = Fig3Grid::default();
    let rows = fig3_table(&grid)?;
    for space in ["discrete", "continuous"] {
        for &dims in &grid.dims {
            let curve: Vec<String> = rows
                .iter()
                .filter(|r| r.space == space && r.dims == dims && [1, 5, 10, 30].contains(&r.n))
                .map(|r| format!("n={}: {:.3}", r.n, r.expectation))
                .collect();
            let crossing = rows.iter().find(|r| r.space == space && r.dims == dims).map(|r| r.crossing_n);
            println!("{space:<10} N={dims:<2} {}  (reaches {} at n={})", curve.join("  "), grid.threshold, crossing.unwrap_or(0));
        }
    }

    let report = sample_lower_bound(&BoundInput {
        space: BoundSpace::Discrete { dims: 10 },
        epsilon: 0.1,
        sigma2: 1e-3,
        p_eps: 0.5,
        a: 0.1,
        threshold: 0.95,
    })?;
    println!("single-sample hit {:.4}, printed bound {:.4}, samples needed {}", report.p_single, report.raw, report.min_samples);
    Ok(())
}
