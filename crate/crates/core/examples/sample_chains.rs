//! Trains briefly, then samples increasing numbers of parallel chains on a
//! exactly solved instances.

use gdsg::dataset::{generate_records, DatasetManifest, DatasetRecord};
use gdsg::diffusion::ScheduleConfig;
use gdsg::eval::exceed_ratio;
use gdsg::gnn::{init_params, GnnConfig};
use gdsg::sampler::{sample_solutions, SampleConfig};
use gdsg::trainer::{train, Example, TrainConfig};

fn main() -> anyhow::Result<()> {
    let records = generate_records(&DatasetManifest::from_name("lq3s6u", 1000, 0)?)?;
    let examples: Vec<Example> = records.iter().map(DatasetRecord::example).collect();
    let cfg = TrainConfig { epochs: 8, lr: 1e-3, ..TrainConfig::default() };
    let model = train(init_params(&GnnConfig::default(), 0)?, &examples, &cfg)?.model;

    let sched = ScheduleConfig::default().build()?;
    let tests = generate_records(&DatasetManifest::from_name("gt3s6u", 20, 1_000_000)?)?;
    for chains in [1, 4, 16, 64] {
        let sample = SampleConfig { chains, ..SampleConfig::default() };
        let mut total = 0.0;
        for t in &tests {
            let out = sample_solutions(&model, &sched, &t.instance, &sample)?;
            total += exceed_ratio(&t.instance, &out.best, t.label_cost)?;
        }
        println!("{chains:>2} chains: mean ratio to optimum {:.4}", total / tests.len() as f64);
    }
    Ok(())
}
