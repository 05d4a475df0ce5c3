use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = GdsgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GdsgError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("solution length mismatch: expected {expected} edges, got decisions={decisions} allocations={allocations}")]
    LengthMismatch {
        expected: usize,
        decisions: usize,
        allocations: usize,
    },

    #[error("infeasible solution: {}", format_violations(.0))]
    Infeasible(Vec<Violation>),

    #[error("edge {edge} is offloaded with zero allocation")]
    ZeroAllocation { edge: usize },

    #[error("enumeration budget exceeded: {combinations} combinations > budget {budget}")]
    BudgetExceeded { combinations: u128, budget: u128 },

    #[error("flow network cannot route {required} units (routed {routed})")]
    InfeasibleNetwork { required: usize, routed: usize },

    #[error("{0}")]
    Domain(String),

    #[error("bound precondition failed: {0}")]
    BoundPrecondition(String),

    #[error("threshold {threshold} is unreachable with per-sample hit probability 0")]
    Unreachable { threshold: f64 },

    #[error("time step {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema mismatch in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    CorruptRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-finite loss at step {step} (lr={lr:e}, grad norm={grad_norm:e})")]
    NonFiniteLoss {
        step: usize,
        lr: f64,
        grad_norm: f64,
    },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GdsgError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            GdsgError::Config(_) | GdsgError::Domain(_) | GdsgError::BoundPrecondition(_) => "config",
            GdsgError::Io { .. } => "io",
            GdsgError::Schema { .. } | GdsgError::CorruptRecord { .. } | GdsgError::Json(_) => "data",
            GdsgError::LengthMismatch { .. } | GdsgError::Shape(_) | GdsgError::StepOutOfRange { .. } => "shape",
            GdsgError::Infeasible(_)
            | GdsgError::ZeroAllocation { .. }
            | GdsgError::InfeasibleNetwork { .. }
            | GdsgError::Generation(_)
            | GdsgError::Unreachable { .. } => "infeasible",
            GdsgError::BudgetExceeded { .. } => "budget",
            GdsgError::NonFiniteLoss { .. } => "training",
        }
    }

    /// Process exit code for the category; 1 and 2 stay free for generic
    /// and usage errors.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 3,
            "io" => 4,
            "data" => 5,
            "shape" => 6,
            "infeasible" => 7,
            "budget" => 8,
            "training" => 9,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GdsgError::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
