//! Run configuration read from TOML.
//!
//! ```toml
//! seed = 7            # feeds every random stream of the run
//! threads = 1         # 1 = strictly sequential and bit-reproducible
//!
//! [model]             # network shape
//! hidden_dim = 64
//! layers = 3
//!
//! [diffusion]         # linear beta schedule shared by training and sampling
//! steps = 200
//! beta_max = 0.1
//!
//! [train]
//! epochs = 20
//! lr = 1e-3
//!
//! [sample]
//! chains = 16
//! steps = 5
//!
//! [heuristic]
//! restarts = 8
//! ```
//!
//! Every section and key is optional. Command-line flags override the file
//! and [`RunConfig::resolve`] pushes the global seed into each module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{GdsgError, Result};
use crate::gnn::GnnConfig;
use crate::sampler::SampleConfig;
use crate::solvers::HeuristicConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub model: GnnConfig,
    pub diffusion: ScheduleConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub heuristic: HeuristicConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GdsgError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GdsgError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Propagates the global seed and the shared schedule into the module
    /// sections and validates them.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.sample.seed = self.seed;
        self.heuristic.seed = self.seed;
        self.train.schedule = self.diffusion.clone();
        self.model.validate()?;
        self.train.validate()?;
        self.sample.validate()?;
        self.diffusion.build()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GdsgError::Config(e.to_string()))
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| GdsgError::io(path, e))
    }
}
