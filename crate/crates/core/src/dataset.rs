//! Labeled instance collections stored as JSON lines.
//!
//! Every line is one [`DatasetRecord`]. A manifest describing how the file
//! was produced sits next to it at `<file>.manifest.json`. Numbers are
//! written with shortest round-trip formatting, so a write/read cycle is
//! lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdsgError, Result};
use crate::model::{check_feasible, generate_instance, objective, GenConfig, OffloadInstance, Solution};
use crate::solvers::{exact_solve, heuristic_best, HeuristicConfig, DEFAULT_BUDGET};
use crate::trainer::Example;

pub const SCHEMA_VERSION: u32 = 1;

/// Absolute tolerance between a stored label cost and its recomputation.
pub const LABEL_COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Heuristic,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub instance: OffloadInstance,
    pub label_solution: Solution,
    pub label_cost: f64,
    pub label_kind: LabelKind,
    pub generator_seed: u64,
}

impl DatasetRecord {
    pub fn example(&self) -> Example<'_> {
        Example {
            instance: &self.instance,
            label: &self.label_solution,
        }
    }

    /// Checks features, label feasibility and the stored cost.
    pub fn validate(&self) -> std::result::Result<(), String> {
        self.instance.validate().map_err(|e| e.to_string())?;
        let violations = check_feasible(&self.instance, &self.label_solution).map_err(|e| e.to_string())?;
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(format!("infeasible label: {}", list.join("; ")));
        }
        let cost = objective(&self.instance, &self.label_solution).map_err(|e| e.to_string())?;
        if (cost - self.label_cost).abs() > LABEL_COST_TOL {
            return Err(format!(
                "label_cost {} differs from objective {cost}",
                self.label_cost
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_servers: usize,
    pub num_users_min: usize,
    pub num_users_max: usize,
    pub count: usize,
    pub label_kind: LabelKind,
    pub heuristic_restarts: usize,
    /// Record `i` is generated from seed `seed + i`.
    pub seed: u64,
    pub schema_version: u32,
    pub offload_requires_rho: bool,
    pub exact_budget: u128,
    pub generator: GenConfig,
}

/// Parses `lq3s6u`, `gt4s10u` or a suffixed form such as `lq3s6u-mini`.
pub fn parse_name(name: &str) -> Result<(LabelKind, usize, usize)> {
    let bad = || GdsgError::Config(format!("dataset name {name:?} does not match (lq|gt)<K>s<M>u"));
    let base = name.split_once('-').map_or(name, |(b, _)| b);
    let kind = match base.get(..2) {
        Some("lq") => LabelKind::Heuristic,
        Some("gt") => LabelKind::Exact,
        _ => return Err(bad()),
    };
    let rest = base[2..].strip_suffix('u').ok_or_else(bad)?;
    let (k, m) = rest.split_once('s').ok_or_else(bad)?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(k) || !digits(m) {
        return Err(bad());
    }
    let (k, m) = (k.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
    if k == 0 || m == 0 {
        return Err(bad());
    }
    Ok((kind, k, m))
}

impl DatasetManifest {
    /// Manifest with defaults derived from the name.
    pub fn from_name(name: &str, count: usize, seed: u64) -> Result<Self> {
        let (label_kind, k, m) = parse_name(name)?;
        Ok(Self {
            name: name.to_string(),
            num_servers: k,
            num_users_min: m,
            num_users_max: m,
            count,
            label_kind,
            heuristic_restarts: 8,
            seed,
            schema_version: SCHEMA_VERSION,
            offload_requires_rho: true,
            exact_budget: DEFAULT_BUDGET,
            generator: GenConfig::new(k, m),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (kind, k, m) = parse_name(&self.name)?;
        if kind != self.label_kind || k != self.num_servers || !(self.num_users_min..=self.num_users_max).contains(&m) {
            return Err(GdsgError::Config(format!(
                "manifest fields disagree with dataset name {}",
                self.name
            )));
        }
        if self.count == 0 {
            return Err(GdsgError::Config("dataset count must be positive".into()));
        }
        Ok(())
    }

    /// Generator seeds used by this campaign.
    pub fn seed_range(&self) -> std::ops::Range<u64> {
        self.seed..self.seed + self.count as u64
    }

    pub fn heuristic_config(&self, seed: u64) -> HeuristicConfig {
        HeuristicConfig {
            restarts: self.heuristic_restarts,
            seed,
            offload_requires_rho: self.offload_requires_rho,
            ..HeuristicConfig::default()
        }
    }
}

/// Errors if two campaigns share any generator seed.
pub fn check_disjoint(a: &DatasetManifest, b: &DatasetManifest) -> Result<()> {
    let (ra, rb) = (a.seed_range(), b.seed_range());
    if ra.start < rb.end && rb.start < ra.end {
        return Err(GdsgError::Config(format!(
            "datasets {} and {} share generator seeds",
            a.name, b.name
        )));
    }
    Ok(())
}

/// Builds the labeled record for generator seed `seed`.
pub fn make_record(manifest: &DatasetManifest, seed: u64) -> Result<DatasetRecord> {
    let mut gen = manifest.generator.clone();
    gen.num_servers = manifest.num_servers;
    gen.num_users = if manifest.num_users_max > manifest.num_users_min {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_1ce5);
        rng.random_range(manifest.num_users_min..=manifest.num_users_max)
    } else {
        manifest.num_users_min
    };
    let instance = generate_instance(&gen, seed)?;
    let (label_solution, label_cost) = match manifest.label_kind {
        LabelKind::Heuristic => {
            let r = heuristic_best(&instance, &manifest.heuristic_config(seed))?;
            (r.solution, r.cost)
        }
        LabelKind::Exact => {
            let r = exact_solve(&instance, manifest.offload_requires_rho, manifest.exact_budget)?;
            (r.solution, r.cost)
        }
    };
    Ok(DatasetRecord {
        schema_version: SCHEMA_VERSION,
        instance,
        label_solution,
        label_cost,
        label_kind: manifest.label_kind,
        generator_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub mean_label_cost: f64,
    /// Offloading users over all users.
    pub mean_offload_fraction: f64,
    /// Mean heuristic cost over exact cost, for exactly labeled sets.
    pub mean_heuristic_gap: Option<f64>,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut s = data_path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Generates every record of a campaign in memory, in seed order.
pub fn generate_records(manifest: &DatasetManifest) -> Result<Vec<DatasetRecord>> {
    manifest.validate()?;
    manifest
        .seed_range()
        .into_par_iter()
        .map(|seed| make_record(manifest, seed))
        .collect()
}

/// Generates every record (in parallel), then writes them in seed order.
pub fn build_dataset(manifest: &DatasetManifest, out_path: &Path) -> Result<DatasetSummary> {
    let records = generate_records(manifest)?;
    write_records(out_path, &records)?;
    let text = serde_json::to_string_pretty(manifest)?;
    let mpath = manifest_path(out_path);
    std::fs::write(&mpath, text + "\n").map_err(|e| GdsgError::io(&mpath, e))?;
    summarize(manifest, &records)
}

pub fn summarize(manifest: &DatasetManifest, records: &[DatasetRecord]) -> Result<DatasetSummary> {
    let n = records.len().max(1) as f64;
    let mean_label_cost = records.iter().map(|r| r.label_cost).sum::<f64>() / n;
    let mean_offload_fraction = records
        .iter()
        .map(|r| r.label_solution.offload_count() as f64 / r.instance.num_users as f64)
        .sum::<f64>()
        / n;
    let mean_heuristic_gap = match manifest.label_kind {
        LabelKind::Exact => {
            let gaps: Vec<f64> = records
                .par_iter()
                .map(|r| {
                    let h = heuristic_best(&r.instance, &manifest.heuristic_config(r.generator_seed))?;
                    Ok(h.cost / r.label_cost)
                })
                .collect::<Result<_>>()?;
            Some(gaps.iter().sum::<f64>() / n)
        }
        LabelKind::Heuristic => None,
    };
    Ok(DatasetSummary {
        count: records.len(),
        mean_label_cost,
        mean_offload_fraction,
        mean_heuristic_gap,
    })
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| GdsgError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| GdsgError::io(path, e))?;
    }
    w.flush().map_err(|e| GdsgError::io(path, e))
}

pub fn load_manifest(data_path: &Path) -> Result<DatasetManifest> {
    let mpath = manifest_path(data_path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| GdsgError::io(&mpath, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| GdsgError::Schema {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(GdsgError::Schema {
            path: mpath,
            msg: format!("schema version {} (expected {SCHEMA_VERSION})", m.schema_version),
        });
    }
    Ok(m)
}

/// Streaming reader over a dataset file.
pub struct DatasetReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line: usize,
    validate: bool,
}

impl Iterator for DatasetReader {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => return Some(Err(GdsgError::io(&self.path, e))),
        };
        self.line += 1;
        let corrupt = |msg: String| GdsgError::CorruptRecord {
            path: self.path.clone(),
            line: self.line,
            msg,
        };
        let value: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Some(Err(corrupt(e.to_string()))),
        };
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(SCHEMA_VERSION)) {
            return Some(Err(GdsgError::Schema {
                path: self.path.clone(),
                msg: format!(
                    "line {}: schema version {version:?} (expected {SCHEMA_VERSION})",
                    self.line
                ),
            }));
        }
        let record: DatasetRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => return Some(Err(corrupt(e.to_string()))),
        };
        if self.validate {
            if let Err(msg) = record.validate() {
                return Some(Err(corrupt(msg)));
            }
        }
        Some(Ok(record))
    }
}

/// Opens a dataset for streaming. With `validate`, every record's label is
/// checked for feasibility and cost consistency as it is read.
pub fn load_dataset(path: &Path, validate: bool) -> Result<DatasetReader> {
    let file = File::open(path).map_err(|e| GdsgError::io(path, e))?;
    Ok(DatasetReader {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line: 0,
        validate,
    })
}

/// Reads and validates a whole dataset.
pub fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    load_dataset(path, true)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(parse_name("lq3s6u").unwrap(), (LabelKind::Heuristic, 3, 6));
        assert_eq!(parse_name("gt20s100u").unwrap(), (LabelKind::Exact, 20, 100));
        assert_eq!(parse_name("lq3s6u-mini").unwrap(), (LabelKind::Heuristic, 3, 6));
        for bad in ["xx3s6u", "lq3s6", "lqs6u", "lq3su", "lq0s6u", "lq3x6u", "gt3s6u7"] {
            assert!(parse_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seed_overlap_detected() {
        let a = DatasetManifest::from_name("lq3s6u", 100, 0).unwrap();
        let b = DatasetManifest::from_name("gt3s6u", 10, 99).unwrap();
        let c = DatasetManifest::from_name("gt3s6u", 10, 100).unwrap();
        assert!(check_disjoint(&a, &b).is_err());
        assert!(check_disjoint(&a, &c).is_ok());
    }
}
