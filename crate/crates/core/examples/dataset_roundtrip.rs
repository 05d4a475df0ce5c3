//! Builds a small labeled dataset on disk, reads it back with validation and
//! prints its summary.

use gdsg::dataset::{build_dataset, load_manifest, load_records, DatasetManifest};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("gdsg-dataset-example");
    std::fs::create_dir_all(&dir)?;
    for (name, seed) in [("lq3s6u", 0), ("gt3s6u", 1_000_000)] {
        let manifest = DatasetManifest::from_name(name, 50, seed)?;
        let path = dir.join(format!("{name}.jsonl"));
        let summary = build_dataset(&manifest, &path)?;
        let records = load_records(&path)?;
        assert_eq!(load_manifest(&path)?, manifest);
        println!("{name}: {} records at {}", records.len(), path.display());
        println!("  mean label cost {:.4}", summary.mean_label_cost);
        println!("  offload fraction {:.3}", summary.mean_offload_fraction);
        if let Some(gap) = summary.mean_heuristic_gap {
            println!("  heuristic / exact {gap:.4}");
        }
    }
    Ok(())
}
