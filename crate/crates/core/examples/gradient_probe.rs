//! Logs cosines between the discrete and continuous loss gradients on shared
//! blocks, for the diffusion objective and the discriminative one.

use gdsg::dataset::{generate_records, DatasetManifest, DatasetRecord};
use gdsg::gnn::{init_params, GnnConfig};
use gdsg::trainer::{train, Example, TaskMode, TrainConfig, ORTHO_THRESHOLDS};

fn main() -> anyhow::Result<()> {
    let records = generate_records(&DatasetManifest::from_name("lq3s6u", 320, 0)?)?;
    let examples: Vec<Example> = records.iter().map(DatasetRecord::example).collect();
    for task in [TaskMode::Multi, TaskMode::Discriminative] {
        let cfg = TrainConfig { epochs: 3, lr: 1e-3, probe_every: 1, task, ..TrainConfig::default() };
        let outcome = train(init_params(&GnnConfig::default(), 0)?, &examples, &cfg)?;
        let ortho = &outcome.ortho;
        print!("{task:?}: {} probes", ortho.entries.len());
        for th in ORTHO_THRESHOLDS {
            print!(", |cos|<{th}: {:.3}", ortho.proportion_below(th));
        }
        println!();
    }
    Ok(())
}
