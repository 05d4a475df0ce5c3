//! Closed-form sampling guarantees: the Chebyshev gap bound, the chance of
//! hitting the optimum in `n` samples, and how many samples that takes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSchedule;
use crate::error::{GdsgError, Result};
use crate::model::OffloadInstance;
use crate::sampler::{run_chains, Denoiser, SampleConfig};
use crate::trainer::{csv_err, csv_writer};

/// Standard normal CDF through the complementary error function, accurate
/// to double precision in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `sigma2 / epsilon^2`, clamped to `[0, 1]`.
pub fn chebyshev_bound(sigma2: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(GdsgError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(sigma2 >= 0.0) {
        return Err(GdsgError::Domain(format!("variance must be non-negative, got {sigma2}")));
    }
    Ok((sigma2 / (epsilon * epsilon)).clamp(0.0, 1.0))
}

/// `1 - (1 - p)^n`, evaluated in log space.
pub fn at_least_once(p: f64, n: u64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    -(n as f64 * (-p).ln_1p()).exp_m1()
}

/// Probability of drawing the optimum of an `N`-dimensional binary problem
/// in one sample when every dimension is off by `epsilon`: `(1 - epsilon)^N`.
pub fn discrete_hit_probability(dims: u32, epsilon: f64) -> Result<f64> {
    if !(0.0 < epsilon && epsilon < 1.0) || dims == 0 {
        return Err(GdsgError::Domain(format!(
            "need epsilon in (0, 1) and N >= 1, got epsilon={epsilon}, N={dims}"
        )));
    }
    Ok((f64::from(dims) * (-epsilon).ln_1p()).exp())
}

/// `1 - [1 - (1 - epsilon)^N]^n`.
pub fn hit_expectation_discrete(dims: u32, epsilon: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(GdsgError::Domain("sample count must be >= 1".into()));
    }
    Ok(at_least_once(discrete_hit_probability(dims, epsilon)?, n))
}

/// Mass of `Normal(mu + epsilon, gamma^2)` inside `[mu - delta, mu + delta]`.
pub fn continuous_dim_probability(epsilon: f64, gamma: f64, delta: f64) -> Result<f64> {
    if !(gamma > 0.0 && delta > 0.0 && epsilon >= 0.0) {
        return Err(GdsgError::Domain(format!(
            "need gamma > 0, delta > 0, epsilon >= 0 (got {gamma}, {delta}, {epsilon})"
        )));
    }
    Ok(normal_cdf((delta - epsilon) / gamma) - normal_cdf((-delta - epsilon) / gamma))
}

/// `1 - (1 - prod P_i)^n` with identical dimensions.
pub fn hit_expectation_continuous(dims: u32, epsilon: f64, gamma: f64, delta: f64, n: u64) -> Result<f64> {
    if dims == 0 || n == 0 {
        return Err(GdsgError::Domain("N and n must be >= 1".into()));
    }
    let p = continuous_dim_probability(epsilon, gamma, delta)?;
    Ok(at_least_once((f64::from(dims) * p.ln()).exp(), n))
}

/// Smallest `n` with `1 - (1 - p)^n >= threshold`.
pub fn min_samples(p: f64, threshold: f64) -> Result<u64> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(GdsgError::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GdsgError::Domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Err(GdsgError::Unreachable { threshold });
    }
    if p == 1.0 {
        return Ok(1);
    }
    let guess = ((-threshold).ln_1p() / (-p).ln_1p()).ceil().max(1.0) as u64;
    // settle rounding at the boundary with the same evaluation as the curves
    let mut n = guess.saturating_sub(2).max(1);
    while at_least_once(p, n) < threshold {
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "lowercase")]
pub enum BoundSpace {
    Discrete { dims: u32 },
    /// Per-dimension hit probabilities `P_i`.
    Continuous { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub space: BoundSpace,
    pub epsilon: f64,
    pub sigma2: f64,
    pub p_eps: f64,
    pub a: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Single-sample hit probability.
    pub p_single: f64,
    /// `ln(a / (p_eps - sigma2/epsilon^2) + 1) / ln(1 - p_single)`, as printed;
    /// negative for typical parameters because the denominator is negative.
    pub raw: f64,
    /// Direct integer inverse of the hit expectation at `threshold`.
    pub min_samples: u64,
}

pub fn sample_lower_bound(input: &BoundInput) -> Result<BoundReport> {
    let ratio = chebyshev_ratio(input.sigma2, input.epsilon)?;
    if !(input.a > 0.0) {
        return Err(GdsgError::Domain(format!("margin a must be positive, got {}", input.a)));
    }
    if !(input.p_eps > ratio) {
        return Err(GdsgError::BoundPrecondition(format!(
            "p_eps = {} must exceed sigma2/epsilon^2 = {ratio}",
            input.p_eps
        )));
    }
    let p_single = match &input.space {
        BoundSpace::Discrete { dims } => discrete_hit_probability(*dims, input.epsilon)?,
        BoundSpace::Continuous { probs } => {
            if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(GdsgError::Domain("per-dimension probabilities must lie in [0, 1]".into()));
            }
            probs.iter().product()
        }
    };
    let raw = (input.a / (input.p_eps - ratio)).ln_1p() / (-p_single).ln_1p();
    Ok(BoundReport {
        p_single,
        raw,
        min_samples: min_samples(p_single, input.threshold)?,
    })
}

/// Unclamped `sigma2 / epsilon^2`.
fn chebyshev_ratio(sigma2: f64, epsilon: f64) -> Result<f64> {
    chebyshev_bound(sigma2, epsilon)?;
    Ok(sigma2 / (epsilon * epsilon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Grid {
    pub dims: Vec<u32>,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub threshold: f64,
    pub n_max: u64,
}

impl Default for Fig3Grid {
    fn default() -> Self {
        Self {
            dims: vec![1, 10, 20],
            epsilon: 0.1,
            gamma: 0.04,
            delta: 0.1,
            threshold: 0.95,
            n_max: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig3Row {
    pub space: &'static str,
    pub dims: u32,
    pub n: u64,
    pub expectation: f64,
    /// First `n` reaching the threshold (may exceed `n_max`).
    pub crossing_n: u64,
}

/// Expectation curves over `n = 1..=n_max` for every dimension in the grid,
/// discrete curves first.
pub fn fig3_table(grid: &Fig3Grid) -> Result<Vec<Fig3Row>> {
    let mut rows = Vec::new();
    let p_dim = continuous_dim_probability(grid.epsilon, grid.gamma, grid.delta)?;
    for space in ["discrete", "continuous"] {
        for &dims in &grid.dims {
            let p = if space == "discrete" {
                discrete_hit_probability(dims, grid.epsilon)?
            } else {
                (f64::from(dims) * p_dim.ln()).exp()
            };
            let crossing_n = min_samples(p, grid.threshold)?;
            rows.extend((1..=grid.n_max).map(|n| Fig3Row {
                space,
                dims,
                n,
                expectation: at_least_once(p, n),
                crossing_n,
            }));
        }
    }
    Ok(rows)
}

pub fn write_fig3_csv(path: &Path, rows: &[Fig3Row]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| GdsgError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub repeats: usize,
    /// Sample variance of the final offload probability per edge.
    pub per_edge: Vec<f64>,
    pub mean: f64,
}

/// Repeats single-chain inference and measures the spread of the final
/// discrete-head probabilities. With `vary_seed = false` every repeat
/// starts from the same noise.
pub fn empirical_generation_variance(
    model: &impl Denoiser,
    sched: &DiffusionSchedule,
    inst: &OffloadInstance,
    repeats: usize,
    cfg: &SampleConfig,
    vary_seed: bool,
) -> Result<VarianceReport> {
    if repeats < 2 {
        return Err(GdsgError::Domain("variance needs at least two repeats".into()));
    }
    let runs: Vec<Vec<f64>> = (0..repeats)
        .map(|r| {
            let seed = if vary_seed { cfg.seed.wrapping_add(r as u64) } else { cfg.seed };
            let one = SampleConfig { chains: 1, seed, ..cfg.clone() };
            Ok(run_chains(model, sched, inst, &one)?.remove(0).0)
        })
        .collect::<Result<_>>()?;
    let e = inst.num_edges();
    let per_edge: Vec<f64> = (0..e)
        .map(|i| {
            let mean = runs.iter().map(|r| r[i]).sum::<f64>() / repeats as f64;
            runs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64
        })
        .collect();
    let mean = per_edge.iter().sum::<f64>() / e.max(1) as f64;
    Ok(VarianceReport { repeats, per_edge, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_examples() {
        assert!((chebyshev_bound(1e-4, 0.1).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(chebyshev_bound(0.0, 0.3).unwrap(), 0.0);
        assert_eq!(chebyshev_bound(1.0, 0.5).unwrap(), 1.0);
        assert!(chebyshev_bound(1.0, 0.0).is_err());
    }

    #[test]
    fn discrete_examples() {
        assert!((hit_expectation_discrete(1, 0.1, 1).unwrap() - 0.9).abs() < 1e-15);
        let v = hit_expectation_discrete(10, 0.1, 7).unwrap();
        assert!((v - 0.9503).abs() < 1e-4);
        assert!(hit_expectation_discrete(10, 0.1, 6).unwrap() < 0.95);
        assert!(hit_expectation_discrete(10, 0.1, 100_000).unwrap() > 1.0 - 1e-12);
        assert!(hit_expectation_discrete(1, 1.0, 1).is_err());
    }

    #[test]
    fn continuous_examples() {
        let p = continuous_dim_probability(0.1, 0.04, 0.1).unwrap();
        assert!((p - 0.5).abs() < 1e-6);
        assert_eq!(min_samples(p, 0.95).unwrap(), 5);
        assert!((continuous_dim_probability(0.0, 1.0, 1e3).unwrap() - 1.0).abs() < 1e-15);
        assert!((continuous_dim_probability(0.05, 1e-6, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert!((hit_expectation_continuous(1, 0.0, 1.0, 1e3, 1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
    }

    #[test]
    fn printed_bound_is_negative_for_typical_values() {
        let r = sample_lower_bound(&BoundInput {
            space: BoundSpace::Discrete { dims: 10 },
            epsilon: 0.1,
            sigma2: 1e-4,
            p_eps: 0.02,
            a: 0.01,
            threshold: 0.95,
        })
        .unwrap();
        let expected = 2f64.ln() / (1.0 - 0.9f64.powi(10)).ln();
        assert!((r.raw - expected).abs() < 1e-12);
        assert!((r.raw + 1.616).abs() < 1e-3);
        assert_eq!(r.min_samples, 7);
    }

    #[test]
    fn bound_preconditions() {
        let base = BoundInput {
            space: BoundSpace::Continuous { probs: vec![0.5] },
            epsilon: 0.1,
            sigma2: 1e-4,
            p_eps: 0.005,
            a: 0.01,
            threshold: 0.95,
        };
        assert!(matches!(sample_lower_bound(&base), Err(GdsgError::BoundPrecondition(_))));
        let zero = BoundInput {
            p_eps: 0.02,
            space: BoundSpace::Continuous { probs: vec![0.0] },
            ..base
        };
        assert!(matches!(sample_lower_bound(&zero), Err(GdsgError::Unreachable { .. })));
    }

    #[test]
    fn min_samples_small_cases() {
        assert_eq!(min_samples(0.9, 0.95).unwrap(), 2);
        assert_eq!(min_samples(1.0, 0.95).unwrap(), 1);
        assert_eq!(min_samples(0.5, 0.95).unwrap(), 5);
    }
}
