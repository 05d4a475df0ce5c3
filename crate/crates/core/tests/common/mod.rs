//! Checks shared by the network tests and the acceptance run.

#![allow(dead_code)]

use gdsg::diffusion::DiffusionSchedule;
use gdsg::gnn::{init_params, BatchedGraph, GnnConfig, GnnModel, NoisyInput, SlotLayout};
use gdsg::model::{check_feasible, generate_instance, objective, GenConfig, OffloadInstance};
use gdsg::sampler::{decode, SampleConfig};
use gdsg::solvers::sqrt_allocation;
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(h: usize, layers: usize) -> GnnConfig {
    GnnConfig {
        hidden_dim: h,
        layers,
        time_dim: 8,
        padding_mask_enabled: true,
    }
}

pub fn random_input(batch: &BatchedGraph, rng: &mut ChaCha8Rng) -> NoisyInput {
    let e = batch.num_edges();
    let d: Vec<u8> = (0..e).map(|_| rng.random_range(0..2)).collect();
    let c: Vec<f64> = (0..e).map(|_| rng.random_range(-2.0..2.0)).collect();
    let t = (0..batch.num_graphs).map(|_| rng.random_range(0..200)).collect();
    NoisyInput::new(&d, &c, t)
}

/// Perturbs every weight so that zero-initialized biases and unit gains
/// are exercised away from their special values.
pub fn jitter(model: &mut GnnModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        p.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

fn weighted_output(model: &GnnModel, batch: &BatchedGraph, input: &NoisyInput, wl: &Array2<f64>, we: &Array1<f64>) -> f64 {
    let pass = model.forward(batch, input).unwrap();
    (pass.logits() * wl).sum() + (pass.eps() * we).sum()
}

pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    /// Name and index of the worst entry.
    pub worst_at: String,
}

/// Central differences with step 1e-5 on every parameter entry of a random
/// `h = 8, S = 2` model. Relative error uses a 1e-6 floor so entries whose
/// true gradient is zero are compared absolutely.
pub fn finite_difference_check(seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let insts: Vec<OffloadInstance> = (0..2).map(|s| generate_instance(&GenConfig::new(2, 3), s + seed).unwrap()).collect();
    let refs: Vec<&OffloadInstance> = insts.iter().collect();
    let batch = BatchedGraph::from_instances(&refs, SlotLayout::Dense);
    let input = random_input(&batch, &mut rng);
    let mut model = init_params(&small_config(8, 2), seed + 11).unwrap();
    jitter(&mut model, seed + 5);
    let e = batch.num_edges();
    let wl = Array2::from_shape_fn((e, 2), |_| rng.random_range(-1.0..1.0));
    let we = Array1::from_shape_fn(e, |_| rng.random_range(-1.0..1.0));

    let grads = model.forward(&batch, &input).unwrap().backward(&wl, &we).unwrap();
    let h = 1e-5;
    let mut report = FdReport { checked: 0, worst: 0.0, worst_at: String::new() };
    for (p, grad) in grads.iter().enumerate() {
        let cols = model.params()[p].ncols();
        for k in 0..model.params()[p].len() {
            let (r, c) = (k / cols, k % cols);
            let orig = model.params()[p][[r, c]];
            model.params_mut()[p][[r, c]] = orig + h;
            let plus = weighted_output(&model, &batch, &input, &wl, &we);
            model.params_mut()[p][[r, c]] = orig - h;
            let minus = weighted_output(&model, &batch, &input, &wl, &we);
            model.params_mut()[p][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[[r, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{}[{r},{c}]", model.names()[p]);
            }
            report.checked += 1;
        }
    }
    report
}

/// Largest change of any real-edge output when random padding edges (with
/// garbage noisy channels) are appended to `graphs` random graphs.
pub fn padding_deviation(graphs: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init_params(&small_config(16, 3), seed).unwrap();
    jitter(&mut model, seed);
    let mut worst: f64 = 0.0;
    for g in 0..graphs {
        let (k, m) = (rng.random_range(1..5), rng.random_range(1..8));
        let inst = generate_instance(&GenConfig::new(k, m), seed * 1_000_003 + g).unwrap();
        let batch = BatchedGraph::from_instances(&[&inst], SlotLayout::Sparse);
        let input = random_input(&batch, &mut rng);
        let before = model.forward(&batch, &input).unwrap();
        let mut padded = batch.clone();
        let count = rng.random_range(1..12);
        let pairs: Vec<(usize, usize)> = (0..count).map(|_| (rng.random_range(0..m), rng.random_range(0..k))).collect();
        padded.append_padding(0, &pairs);
        let mut ch = Array2::zeros((padded.num_edges(), 3));
        ch.slice_mut(s![..batch.num_edges(), ..]).assign(&input.channels);
        ch.slice_mut(s![batch.num_edges().., ..]).fill(7.5);
        let after = model.forward(&padded, &NoisyInput { channels: ch, t: input.t.clone() }).unwrap();
        for i in 0..batch.num_edges() {
            worst = worst.max((before.eps()[i] - after.eps()[i]).abs());
            for c in 0..2 {
                worst = worst.max((before.logits()[[i, c]] - after.logits()[[i, c]]).abs());
            }
        }
    }
    worst
}

/// Two-state kernel: keep with probability `1 - beta`, flip with `beta`.
pub fn kernel(beta: f64) -> [[f64; 2]; 2] {
    [[1.0 - beta, beta], [beta, 1.0 - beta]]
}

pub fn compose(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn cumulative(s: &DiffusionSchedule, from: usize, to: usize) -> [[f64; 2]; 2] {
    let mut m = [[1.0, 0.0], [0.0, 1.0]];
    for t in from + 1..=to {
        m = compose(m, kernel(s.beta(t)));
    }
    m
}

/// Bayes rule over the two states of `y_s`, mixed over the predicted clean
/// bit.
pub fn bayes_posterior(s: &DiffusionSchedule, y_t: u8, p0: [f64; 2], t: usize, prev: usize) -> [f64; 2] {
    let to_t = cumulative(s, prev, t);
    let to_prev = cumulative(s, 0, prev);
    let mut out = [0.0; 2];
    for x0 in 0..2 {
        let mut joint = [0.0; 2];
        for ys in 0..2 {
            joint[ys] = to_prev[x0][ys] * to_t[ys][y_t as usize];
        }
        let z = joint[0] + joint[1];
        if z > 0.0 {
            for ys in 0..2 {
                out[ys] += p0[x0] * joint[ys] / z;
            }
        }
    }
    out
}

pub fn oracle_eps(y_t: &[f64], y0: &[f64], t: usize, s: &DiffusionSchedule) -> Vec<f64> {
    let ab = s.alpha_bar(t);
    y_t.iter().zip(y0).map(|(y, x)| (y - ab.sqrt() * x) / (1.0 - ab).sqrt()).collect()
}


/// Grid search at resolution 1e-3 over the shares of up to three tasks on one
/// server. The closed form must beat or tie it.
pub fn grid_best(costs: &[f64]) -> f64 {
    let n = 1000;
    let f = |a: &[f64]| costs.iter().zip(a).map(|(c, x)| c / x).sum::<f64>();
    match costs.len() {
        1 => costs[0],
        2 => (1..n).map(|i| f(&[i as f64 / n as f64, (n - i) as f64 / n as f64])).fold(f64::INFINITY, f64::min),
        3 => {
            let mut best = f64::INFINITY;
            for i in 1..n {
                for j in 1..n - i {
                    let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
                    best = best.min(f(&[a, b, 1.0 - a - b]));
                }
            }
            best
        }
        _ => unreachable!(),
    }
}

/// Compares the square-root allocation with the grid on the first three
/// offloadable tasks of every server of `instances` random 3s6u instances.
/// Returns the number of comparisons and the worst relative excess of the
/// closed form over the grid.
pub fn closed_form_vs_grid(instances: u64) -> (usize, f64) {
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..instances {
        let inst = generate_instance(&GenConfig::new(3, 6), seed).unwrap();
        for s in 0..inst.num_servers {
            let costs: Vec<f64> = (0..inst.num_edges())
                .filter(|&i| inst.edges[i].server == s && inst.edge_features[i].rho > 0.0)
                .map(|i| inst.edge_features[i].c_offload_full)
                .take(3)
                .collect();
            if costs.is_empty() {
                continue;
            }
            let a = sqrt_allocation(&costs);
            let closed: f64 = costs.iter().zip(&a).map(|(c, x)| c / x).sum();
            worst = worst.max(closed / grid_best(&costs) - 1.0);
            checked += 1;
        }
    }
    (checked, worst)
}

fn wild(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => f64::NAN,
        1 => f64::INFINITY,
        2 => f64::NEG_INFINITY,
        3 => rng.random_range(-1e6..1e6),
        _ => rng.random_range(-1.5..1.5),
    }
}

/// Feeds `trials` random head outputs (including NaN, infinities and huge
/// values) to the decoder and counts infeasible or non-finite results.
pub fn decode_fuzz(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SampleConfig::default();
    let insts: Vec<OffloadInstance> = (0..50)
        .map(|s| generate_instance(&GenConfig::new(1 + s as usize % 4, 2 + s as usize % 7), s).unwrap())
        .collect();
    let mut bad = 0;
    for trial in 0..trials {
        let inst = &insts[trial % insts.len()];
        let e = inst.num_edges();
        let probs: Vec<f64> = (0..e).map(|_| if rng.random_bool(0.3) { wild(&mut rng) } else { rng.random() }).collect();
        let values: Vec<f64> = (0..e).map(|_| wild(&mut rng)).collect();
        let d = decode(inst, &probs, &values, &cfg);
        let ok = check_feasible(inst, &d.solution).unwrap().is_empty()
            && objective(inst, &d.solution).map(f64::is_finite).unwrap_or(false);
        bad += usize::from(!ok);
    }
    bad
}
