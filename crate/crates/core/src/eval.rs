//! Exceed-ratio evaluation of solvers and trained models.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::DatasetRecord;
use crate::diffusion::DiffusionSchedule;
use crate::error::{GdsgError, Result};
use crate::gnn::GnnModel;
use crate::model::{objective, OffloadInstance, Solution};
use crate::sampler::{predict_discriminative, sample_solutions, SampleConfig};
use crate::solvers::{heuristic_best, HeuristicConfig};
use crate::trainer::{csv_err, csv_writer};

/// Cost of `sol` relative to the label cost. Infeasible solutions are
/// rejected.
pub fn exceed_ratio(inst: &OffloadInstance, sol: &Solution, label_cost: f64) -> Result<f64> {
    if !(label_cost > 0.0) {
        return Err(GdsgError::Domain(format!("label cost must be positive, got {label_cost}")));
    }
    Ok(objective(inst, sol)? / label_cost)
}

/// A method under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    /// Diffusion sampling with parallel chains.
    Diffusion {
        model: &'a GnnModel,
        schedule: &'a DiffusionSchedule,
        sample: &'a SampleConfig,
    },
    /// One clean forward pass of a discriminative model.
    Discriminative { model: &'a GnnModel, sample: &'a SampleConfig },
    Heuristic(&'a HeuristicConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceEval {
    pub index: usize,
    pub cost: f64,
    pub label_cost: f64,
    pub ratio: f64,
    /// Decoded candidates that already met the capacity constraint.
    pub feasible_candidates: usize,
    pub candidates: usize,
    pub repaired_servers: usize,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub instances: Vec<InstanceEval>,
}

impl EvalReport {
    pub fn mean_ratio(&self) -> f64 {
        self.instances.iter().map(|i| i.ratio).sum::<f64>() / self.instances.len().max(1) as f64
    }

    /// Nearest-rank 90th percentile.
    pub fn p90_ratio(&self) -> f64 {
        percentile(self.instances.iter().map(|i| i.ratio).collect(), 0.9)
    }

    pub fn min_ratio(&self) -> f64 {
        self.instances.iter().map(|i| i.ratio).fold(f64::INFINITY, f64::min)
    }

    /// Share of decoded candidates that needed no capacity repair.
    pub fn feasibility_before_repair(&self) -> f64 {
        let ok: usize = self.instances.iter().map(|i| i.feasible_candidates).sum();
        let all: usize = self.instances.iter().map(|i| i.candidates).sum();
        ok as f64 / all.max(1) as f64
    }

    pub fn repair_count(&self) -> usize {
        self.instances.iter().map(|i| i.repaired_servers).sum()
    }

    pub fn mean_millis(&self) -> f64 {
        self.instances.iter().map(|i| i.millis).sum::<f64>() / self.instances.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        for i in &self.instances {
            w.serialize(i).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| GdsgError::io(path, e))
    }
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Runs `method` on every record in parallel. Sampling seeds are offset by
/// the record index, so results do not depend on the thread count.
pub fn evaluate(method: Method, records: &[DatasetRecord], method_name: &str, dataset: &str) -> Result<EvalReport> {
    let instances = records
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            let start = Instant::now();
            let (solution, feasible, candidates, repaired) = match method {
                Method::Diffusion {
                    model,
                    schedule,
                    sample,
                } => {
                    let cfg = SampleConfig {
                        seed: sample.seed.wrapping_add(index as u64),
                        ..sample.clone()
                    };
                    let out = sample_solutions(model, schedule, &r.instance, &cfg)?;
                    let feasible = out.candidates.iter().filter(|c| c.repaired_servers == 0).count();
                    let repaired = out.candidates.iter().map(|c| c.repaired_servers).sum();
                    (out.best, feasible, out.candidates.len(), repaired)
                }
                Method::Discriminative { model, sample } => {
                    let c = predict_discriminative(model, &r.instance, sample)?;
                    (c.solution, usize::from(c.repaired_servers == 0), 1, c.repaired_servers)
                }
                Method::Heuristic(cfg) => (heuristic_best(&r.instance, cfg)?.solution, 1, 1, 0),
            };
            let millis = start.elapsed().as_secs_f64() * 1e3;
            let cost = objective(&r.instance, &solution)?;
            Ok(InstanceEval {
                index,
                cost,
                label_cost: r.label_cost,
                ratio: exceed_ratio(&r.instance, &solution, r.label_cost)?,
                feasible_candidates: feasible,
                candidates,
                repaired_servers: repaired,
                millis,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        method: method_name.to_string(),
        dataset: dataset.to_string(),
        instances,
    })
}

/// A named exactly labeled test set.
#[derive(Debug, Clone, Copy)]
pub struct TestSet<'a> {
    pub name: &'a str,
    pub records: &'a [DatasetRecord],
}

/// Trained networks entering the comparison, all from the same training set.
#[derive(Debug, Clone, Copy)]
pub struct BenchModels<'a> {
    pub train_set: &'a str,
    pub gdsg: &'a GnnModel,
    pub gdsg_mask_off: &'a GnnModel,
    pub dignn: &'a GnnModel,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub schedule: DiffusionSchedule,
    pub sample: SampleConfig,
    pub heuristic: HeuristicConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub train_set: String,
    pub test_set: String,
    pub mean_ratio: f64,
    pub p90_ratio: f64,
    pub min_ratio: f64,
    pub feasible_before_repair: f64,
    pub mean_ms: f64,
}

impl BenchRow {
    fn from_report(r: &EvalReport, train_set: &str) -> Self {
        Self {
            method: r.method.clone(),
            train_set: train_set.to_string(),
            test_set: r.dataset.clone(),
            mean_ratio: r.mean_ratio(),
            p90_ratio: r.p90_ratio(),
            min_ratio: r.min_ratio(),
            feasible_before_repair: r.feasibility_before_repair(),
            mean_ms: r.mean_millis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub method: String,
    pub train_set: String,
    pub test_set: String,
    pub mean_ratio: f64,
    pub p90_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub heatmap: Vec<HeatmapCell>,
    pub reports: Vec<EvalReport>,
}

pub const GDSG: &str = "GDSG";
pub const GDSG_MASK_OFF: &str = "GDSG-mask-off";
pub const DIGNN: &str = "DiGNN";
pub const HEU: &str = "HEU";

impl BenchTable {
    pub fn row(&self, method: &str, test_set: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.test_set == test_set)
    }

    pub fn write_table_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    /// Columns `method, train_set, test_set, mean_ratio, p90_ratio`.
    pub fn write_heatmap_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.heatmap)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| GdsgError::io(path, e))
}

/// Evaluates every model group and the heuristic on every test set. Test
/// sets must carry exact labels.
pub fn run_benchmark(models: &[BenchModels], tests: &[TestSet], cfg: &BenchConfig) -> Result<BenchTable> {
    let mut table = BenchTable::default();
    for test in tests {
        if let Some(r) = test
            .records
            .iter()
            .find(|r| r.label_kind != crate::dataset::LabelKind::Exact)
        {
            return Err(GdsgError::Config(format!(
                "test set {} has a non-exact label (seed {})",
                test.name, r.generator_seed
            )));
        }
        let heu = evaluate(Method::Heuristic(&cfg.heuristic), test.records, HEU, test.name)?;
        table.rows.push(BenchRow::from_report(&heu, "-"));
        table.reports.push(heu);
        for m in models {
            let mut mask_off = m.gdsg_mask_off.clone();
            mask_off.set_padding_mask(false);
            let runs = [
                (GDSG, Method::Diffusion { model: m.gdsg, schedule: &cfg.schedule, sample: &cfg.sample }),
                (GDSG_MASK_OFF, Method::Diffusion { model: &mask_off, schedule: &cfg.schedule, sample: &cfg.sample }),
                (DIGNN, Method::Discriminative { model: m.dignn, sample: &cfg.sample }),
            ];
            for (name, method) in runs {
                let report = evaluate(method, test.records, name, test.name)?;
                let row = BenchRow::from_report(&report, m.train_set);
                if name != DIGNN {
                    table.heatmap.push(HeatmapCell {
                        method: name.to_string(),
                        train_set: m.train_set.to_string(),
                        test_set: test.name.to_string(),
                        mean_ratio: row.mean_ratio,
                        p90_ratio: row.p90_ratio,
                    });
                }
                table.rows.push(row);
                table.reports.push(report);
            }
        }
    }
    Ok(table)
}
