//! Parallel reverse chains and decoding of head outputs into feasible
//! solutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    continuous_denoise_step, discrete_denoise_step, inference_timesteps, predict_y0, signal_to_alloc, DenoiseMode,
    DiffusionSchedule,
};
use crate::error::{GdsgError, Result};
use crate::gnn::{BatchedGraph, GnnModel, NoisyInput, SlotLayout};
use crate::model::{objective, OffloadInstance, Solution, CAPACITY_SLACK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub chains: usize,
    /// Number of denoising jumps in DDIM mode; ancestral mode visits every
    /// timestep.
    pub steps: usize,
    pub mode: DenoiseMode,
    pub seed: u64,
    pub offload_threshold: f64,
    pub a_min: f64,
    pub offload_requires_rho: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            chains: 16,
            steps: 5,
            mode: DenoiseMode::Ddim,
            seed: 0,
            offload_threshold: 0.5,
            a_min: 1e-3,
            offload_requires_rho: true,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.steps == 0 {
            return Err(GdsgError::Config("chains and steps must be >= 1".into()));
        }
        if !(0.0 < self.a_min && self.a_min <= 1.0) {
            return Err(GdsgError::Config(format!("a_min {} outside (0, 1]", self.a_min)));
        }
        Ok(())
    }
}

/// Anything that predicts `y0` probabilities and noise for a noisy batch.
pub trait Denoiser: Sync {
    /// Returns `[p(local), p(offload)]` and the noise estimate per slot.
    fn predict(&self, batch: &BatchedGraph, input: &NoisyInput) -> Result<(Vec<[f64; 2]>, Vec<f64>)>;
}

impl Denoiser for GnnModel {
    fn predict(&self, batch: &BatchedGraph, input: &NoisyInput) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let pass = self.forward(batch, input)?;
        Ok((pass.probabilities(), pass.eps().to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub solution: Solution,
    /// Servers whose chosen shares had to be rescaled.
    pub repaired_servers: usize,
}

/// Turns per-edge offload probabilities and continuous values into a
/// feasible solution.
///
/// Each user offloads on its most probable edge (lowest index on ties) when
/// that probability exceeds the threshold and, if gated, the edge has
/// `rho > 0`. Shares are `clamp((v + 1) / 2, a_min, 1)`; a server whose
/// chosen shares sum above one is rescaled proportionally.
pub fn decode(inst: &OffloadInstance, probs: &[f64], values: &[f64], cfg: &SampleConfig) -> Decoded {
    let n = inst.num_edges();
    let mut decisions = vec![false; n];
    for edges in inst.edges_by_user() {
        let mut best: Option<(usize, f64)> = None;
        for &i in &edges {
            let p = if probs[i].is_nan() { 0.0 } else { probs[i] };
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        if let Some((i, p)) = best {
            let gate = !cfg.offload_requires_rho || inst.edge_features[i].rho > 0.0;
            decisions[i] = p > cfg.offload_threshold && gate;
        }
    }
    let mut allocations: Vec<f64> = values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                cfg.a_min
            } else {
                signal_to_alloc(v).clamp(cfg.a_min, 1.0)
            }
        })
        .collect();
    let mut repaired = 0;
    for edges in inst.edges_by_server() {
        let load: f64 = edges.iter().filter(|&&i| decisions[i]).map(|&i| allocations[i]).sum();
        if load > 1.0 {
            repaired += 1;
            for &i in edges.iter().filter(|&&i| decisions[i]) {
                allocations[i] /= load;
            }
        }
    }
    debug_assert!(inst.edges_by_server().iter().all(|e| {
        e.iter().filter(|&&i| decisions[i]).map(|&i| allocations[i]).sum::<f64>() <= 1.0 + CAPACITY_SLACK
    }));
    Decoded {
        solution: Solution { decisions, allocations },
        repaired_servers: repaired,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub solution: Solution,
    pub cost: f64,
    pub repaired_servers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub best: Solution,
    pub best_cost: f64,
    /// Index of the chain that produced `best`.
    pub best_chain: usize,
    pub candidates: Vec<Candidate>,
}

/// Per-chain RNG: chain `k` always uses stream `k` of the configured seed, so
/// the first `n` chains of a larger run reproduce a run with `n` chains.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Final head outputs of each chain on the real edges: offload
/// probabilities and reconstructed continuous values.
pub fn run_chains(
    model: &impl Denoiser,
    sched: &DiffusionSchedule,
    inst: &OffloadInstance,
    cfg: &SampleConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    cfg.validate()?;
    let n = cfg.chains;
    let copies: Vec<&OffloadInstance> = vec![inst; n];
    let batch = BatchedGraph::from_instances(&copies, SlotLayout::Dense);
    let e = inst.num_edges();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|k| chain_rng(cfg.seed, k)).collect();
    let mut yd: Vec<Vec<u8>> = Vec::with_capacity(n);
    let mut yc: Vec<Vec<f64>> = Vec::with_capacity(n);
    for rng in &mut rngs {
        yd.push((0..e).map(|_| rng.random_range(0..2u8)).collect());
        yc.push((0..e).map(|_| rng.sample(StandardNormal)).collect());
    }
    let grid = match cfg.mode {
        DenoiseMode::Ddim => inference_timesteps(sched.steps(), cfg.steps),
        DenoiseMode::Ancestral => (0..=sched.steps()).rev().collect(),
    };
    let mut out = vec![(Vec::new(), Vec::new()); n];
    for w in grid.windows(2) {
        let (t, s) = (w[0], w[1]);
        let d_refs: Vec<&[u8]> = yd.iter().map(Vec::as_slice).collect();
        let c_refs: Vec<&[f64]> = yc.iter().map(Vec::as_slice).collect();
        let input = NoisyInput::new(&batch.scatter(&d_refs, 0), &batch.scatter(&c_refs, 0.0), vec![t; n]);
        let (probs, eps) = model.predict(&batch, &input)?;
        for k in 0..n {
            let p = batch.gather(&probs, k);
            let eps_k = batch.gather(&eps, k);
            if s == 0 {
                out[k] = (p.iter().map(|q| q[1]).collect(), predict_y0(&yc[k], &eps_k, t, sched));
            } else {
                yd[k] = discrete_denoise_step(&yd[k], &p, t, s, sched, cfg.mode, &mut rngs[k])?;
                yc[k] = continuous_denoise_step(&yc[k], &eps_k, t, s, sched, cfg.mode, &mut rngs[k])?;
            }
        }
    }
    Ok(out)
}

/// Runs `cfg.chains` reverse chains in one batch, decodes each and keeps the
/// cheapest (first on ties).
pub fn sample_solutions(
    model: &impl Denoiser,
    sched: &DiffusionSchedule,
    inst: &OffloadInstance,
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    let finals = run_chains(model, sched, inst, cfg)?;
    let mut candidates = Vec::with_capacity(finals.len());
    for (probs, values) in &finals {
        let d = decode(inst, probs, values, cfg);
        let cost = objective(inst, &d.solution)?;
        candidates.push(Candidate {
            solution: d.solution,
            cost,
            repaired_servers: d.repaired_servers,
        });
    }
    let (best_chain, best) = candidates
        .iter()
        .enumerate()
        .fold(None::<(usize, &Candidate)>, |acc, (k, c)| match acc {
            Some((_, b)) if b.cost <= c.cost => acc,
            _ => Some((k, c)),
        })
        .expect("at least one chain");
    Ok(SampleOutput {
        best: best.solution.clone(),
        best_cost: best.cost,
        best_chain,
        candidates,
    })
}

/// Single clean forward pass of a discriminatively trained model, decoded.
pub fn predict_discriminative(model: &GnnModel, inst: &OffloadInstance, cfg: &SampleConfig) -> Result<Candidate> {
    let batch = BatchedGraph::from_instances(&[inst], SlotLayout::Dense);
    let (probs, values) = model.predict(&batch, &NoisyInput::blank(batch.num_edges(), 1))?;
    let p: Vec<f64> = batch.gather(&probs, 0).iter().map(|q| q[1]).collect();
    let d = decode(inst, &p, &batch.gather(&values, 0), cfg);
    let cost = objective(inst, &d.solution)?;
    Ok(Candidate {
        solution: d.solution,
        cost,
        repaired_servers: d.repaired_servers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_feasible, generate_instance, Edge, GenConfig, RawEdgeParams, SystemParams};

    fn cfg() -> SampleConfig {
        SampleConfig::default()
    }

    fn co_server_pair() -> OffloadInstance {
        let raw = RawEdgeParams {
            input_bits: 1e6,
            cycles: 1e9,
            local_cps: 1e9,
            alpha: 0.5,
            channel_gain: 0.9,
            tau_max: 5.0,
        };
        OffloadInstance::from_raw(
            1,
            2,
            vec![Edge { user: 0, server: 0 }, Edge { user: 1, server: 0 }],
            vec![raw, raw],
            SystemParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_probabilities_decode_all_local() {
        let inst = generate_instance(&GenConfig::new(3, 6), 0).unwrap();
        let n = inst.num_edges();
        let d = decode(&inst, &vec![0.0; n], &vec![0.3; n], &cfg());
        assert_eq!(d.solution.offload_count(), 0);
        assert!(check_feasible(&inst, &d.solution).unwrap().is_empty());
    }

    #[test]
    fn overloaded_server_is_rescaled() {
        let inst = co_server_pair();
        let d = decode(&inst, &[0.9, 0.8], &[0.6, 0.2], &cfg());
        assert_eq!(d.solution.decisions, vec![true, true]);
        assert!((d.solution.allocations[0] - 4.0 / 7.0).abs() < 1e-15);
        assert!((d.solution.allocations[1] - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(d.repaired_servers, 1);
    }

    #[test]
    fn ties_pick_lowest_edge() {
        let mut gen = GenConfig::new(3, 1);
        gen.degree_min = 3;
        gen.degree_max = 3;
        let inst = (0..100)
            .map(|s| generate_instance(&gen, s).unwrap())
            .find(|i| i.edge_features.iter().all(|f| f.rho > 0.0))
            .unwrap();
        let d = decode(&inst, &[0.9, 0.9, 0.9], &[0.0; 3], &cfg());
        assert_eq!(d.solution.decisions, vec![true, false, false]);
    }

    #[test]
    fn threshold_is_strict_and_nan_is_tolerated() {
        let inst = co_server_pair();
        let d = decode(&inst, &[0.5, f64::NAN], &[f64::NAN, f64::INFINITY], &cfg());
        assert_eq!(d.solution.offload_count(), 0);
        assert_eq!(d.solution.allocations, vec![1e-3, 1.0]);
    }
}
