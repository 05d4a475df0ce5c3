// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod model;
pub mod sampler;
pub mod solvers;
pub mod suite;
pub mod theory;
pub mod trainer;
