//! Full desk-scale comparison: trains the diffusion model with and without
//! the padding mask plus the discriminative baseline, then evaluates every
//! method against exact labels at the training scale and at a larger one.
//!
//! cargo run --release --example desk_benchmark -- 2000 200

use gdsg::config::RunConfig;
use gdsg::suite::{benchmark_trio, train_trio, DeskSuite};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let mut suite = DeskSuite::default();
    if let Some(n) = args.next().transpose()? {
        suite.train_count = n;
    }
    if let Some(n) = args.next().transpose()? {
        for t in &mut suite.tests {
            t.count = n;
        }
    }
    let mut run = RunConfig::default();
    run.train.epochs = 20;
    run.train.lr = 1e-3;
    let run = run.resolve()?;

    let data = suite.generate()?;
    let trio = train_trio(&data.train, &run)?;
    let table = benchmark_trio(&trio, &suite.train_name, &data, &run)?;
    println!("{:<14} {:<8} {:>8} {:>8} {:>10}", "method", "test", "mean", "p90", "ms/inst");
    for r in &table.rows {
        println!("{:<14} {:<8} {:>8.4} {:>8.4} {:>10.2}", r.method, r.test_set, r.mean_ratio, r.p90_ratio, r.mean_ms);
    }
    Ok(())
}
