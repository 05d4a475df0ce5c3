//! Trains the multi-task network on a small in-memory heuristic dataset and
//! saves a checkpoint.
//!
//! cargo run --release --example train_model -- 300 5

use gdsg::dataset::{generate_records, DatasetManifest, DatasetRecord};
use gdsg::gnn::{init_params, GnnConfig, GnnModel};
use gdsg::trainer::{train, Example, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let count = args.next().transpose()?.unwrap_or(300);
    let epochs = args.next().transpose()?.unwrap_or(5);

    let records = generate_records(&DatasetManifest::from_name("lq3s6u", count, 0)?)?;
    let examples: Vec<Example> = records.iter().map(DatasetRecord::example).collect();
    let model = init_params(&GnnConfig::default(), 0)?;
    println!("{} parameters", model.num_parameters());

    let cfg = TrainConfig { epochs, lr: 1e-3, ..TrainConfig::default() };
    let outcome = train(model, &examples, &cfg)?;
    for m in &outcome.metrics {
        println!(
            "epoch {:>2}  train ce {:.4} mse {:.4}  val ce {:.4}  lr {:.2e}",
            m.epoch,
            m.train_discrete,
            m.train_continuous,
            m.val_discrete.unwrap_or(f64::NAN),
            m.lr
        );
    }
    let path = std::env::temp_dir().join("gdsg-example-model.json");
    outcome.model.save(&path)?;
    assert_eq!(GnnModel::load(&path)?.params(), outcome.model.params());
    println!("best epoch {}, saved to {}", outcome.best_epoch, path.display());
    Ok(())
}
