//! The desk-scale campaign: one heuristic training set, exact test sets at
//! the training scale and beyond, three trained networks and the benchmark.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{check_disjoint, generate_records, DatasetManifest, DatasetRecord};
use crate::error::Result;
use crate::eval::{run_benchmark, BenchConfig, BenchModels, BenchTable, TestSet};
use crate::gnn::{init_params, GnnConfig};
use crate::trainer::{train, train_discriminative, Example, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskSuite {
    pub train_name: String,
    pub train_count: usize,
    pub train_seed: u64,
    pub heuristic_restarts: usize,
    /// Exact test sets; the first one should match the training scale.
    pub tests: Vec<TestSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: String,
    pub count: usize,
    pub seed: u64,
}

impl Default for DeskSuite {
    fn default() -> Self {
        Self {
            train_name: "lq3s6u-mini".into(),
            train_count: 2000,
            train_seed: 0,
            heuristic_restarts: 8,
            tests: vec![
                TestSpec { name: "gt3s6u".into(), count: 200, seed: 1_000_000 },
                TestSpec { name: "gt3s8u".into(), count: 200, seed: 2_000_000 },
            ],
        }
    }
}

pub struct SuiteData {
    pub train: Vec<DatasetRecord>,
    pub tests: Vec<(String, Vec<DatasetRecord>)>,
}

impl DeskSuite {
    pub fn manifests(&self) -> Result<(DatasetManifest, Vec<DatasetManifest>)> {
        let mut train = DatasetManifest::from_name(&self.train_name, self.train_count, self.train_seed)?;
        train.heuristic_restarts = self.heuristic_restarts;
        let tests = self
            .tests
            .iter()
            .map(|t| DatasetManifest::from_name(&t.name, t.count, t.seed))
            .collect::<Result<Vec<_>>>()?;
        for t in &tests {
            check_disjoint(&train, t)?;
        }
        Ok((train, tests))
    }

    pub fn generate(&self) -> Result<SuiteData> {
        let (train, tests) = self.manifests()?;
        Ok(SuiteData {
            train: generate_records(&train)?,
            tests: tests
                .iter()
                .map(|m| Ok((m.name.clone(), generate_records(m)?)))
                .collect::<Result<_>>()?,
        })
    }
}

pub struct TrainedTrio {
    pub gdsg: TrainOutcome,
    pub gdsg_mask_off: TrainOutcome,
    pub dignn: TrainOutcome,
}

/// Trains the diffusion model with and without the padding mask and the
/// discriminative baseline, all from the same initialization seed.
pub fn train_trio(records: &[DatasetRecord], run: &RunConfig) -> Result<TrainedTrio> {
    let examples: Vec<Example> = records.iter().map(DatasetRecord::example).collect();
    let on = GnnConfig { padding_mask_enabled: true, ..run.model.clone() };
    let off = GnnConfig { padding_mask_enabled: false, ..run.model.clone() };
    Ok(TrainedTrio {
        gdsg: train(init_params(&on, run.seed)?, &examples, &run.train)?,
        gdsg_mask_off: train(init_params(&off, run.seed)?, &examples, &run.train)?,
        dignn: train_discriminative(init_params(&on, run.seed)?, &examples, &run.train)?,
    })
}

pub fn benchmark_trio(trio: &TrainedTrio, train_set: &str, data: &SuiteData, run: &RunConfig) -> Result<BenchTable> {
    let models = [BenchModels {
        train_set,
        gdsg: &trio.gdsg.model,
        gdsg_mask_off: &trio.gdsg_mask_off.model,
        dignn: &trio.dignn.model,
    }];
    let tests: Vec<TestSet> = data
        .tests
        .iter()
        .map(|(name, records)| TestSet { name, records })
        .collect();
    let cfg = BenchConfig {
        schedule: run.diffusion.build()?,
        sample: run.sample.clone(),
        heuristic: run.heuristic.clone(),
    };
    run_benchmark(&models, &tests, &cfg)
}
