//! Multi-task training of the denoising network and the discriminative
//! baseline, plus the gradient alignment probe.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    alloc_to_signal, continuous_noise_to_t, discrete_noise_to_t, DiffusionSchedule, ScheduleConfig,
};
use crate::error::{GdsgError, Result};
use crate::gnn::{BatchedGraph, ForwardPass, GnnModel, NoisyInput, SlotLayout};
use crate::model::{OffloadInstance, Solution};

/// A labeled training graph.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub instance: &'a OffloadInstance,
    pub label: &'a Solution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// Both diffusion channels, losses summed.
    Multi,
    DiscreteOnly,
    ContinuousOnly,
    /// No diffusion: the heads predict `D` and `2A - 1` from the clean graph.
    Discriminative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate of the cosine decay.
    pub lr_min: f64,
    pub discrete_weight: f64,
    pub continuous_weight: f64,
    pub seed: u64,
    /// Probe gradient alignment every this many steps; 0 disables it.
    pub probe_every: usize,
    pub task: TaskMode,
    pub validation_fraction: f64,
    /// Set from the run's diffusion section rather than the train section.
    #[serde(skip)]
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 2e-4,
            lr_min: 1e-5,
            discrete_weight: 1.0,
            continuous_weight: 1.0,
            seed: 0,
            probe_every: 0,
            task: TaskMode::Multi,
            validation_fraction: 0.05,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(GdsgError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr.max(self.lr_min)) {
            return Err(GdsgError::Config(format!(
                "invalid learning rates lr={} lr_min={}",
                self.lr, self.lr_min
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(GdsgError::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Cosine decay from `lr` to `lr_min` over `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 || self.lr == 0.0 {
            return self.lr;
        }
        let lo = self.lr_min.min(self.lr);
        let progress = step as f64 / (total - 1) as f64;
        lo + 0.5 * (self.lr - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Head targets aligned with a batch's edge slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub discrete: Vec<u8>,
    /// Target of the continuous head: the injected noise in diffusion
    /// modes, the rescaled allocation in discriminative mode.
    pub continuous: Vec<f64>,
}

/// Masked mean cross-entropy and squared error plus their gradients with
/// respect to the head outputs. Padding slots get zero gradient.
pub fn masked_losses(
    logits: &Array2<f64>,
    eps_hat: &Array1<f64>,
    targets: &Targets,
    mask: &Array1<f64>,
) -> Result<(f64, f64, Array2<f64>, Array1<f64>)> {
    let n = mask.len();
    if logits.nrows() != n || eps_hat.len() != n || targets.discrete.len() != n || targets.continuous.len() != n {
        return Err(GdsgError::Shape("loss inputs do not match the edge slots".into()));
    }
    let real = mask.iter().filter(|&&m| m != 0.0).count();
    if real == 0 {
        return Err(GdsgError::Shape("batch has no real edges".into()));
    }
    let inv = 1.0 / real as f64;
    let mut ce = 0.0;
    let mut mse = 0.0;
    let mut gl = Array2::zeros((n, 2));
    let mut ge = Array1::zeros(n);
    for i in (0..n).filter(|&i| mask[i] != 0.0) {
        let (a, b) = (logits[[i, 0]], logits[[i, 1]]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let y = targets.discrete[i] as usize;
        ce -= logits[[i, y]] - lse;
        for k in 0..2 {
            let p = (logits[[i, k]] - lse).exp();
            gl[[i, k]] = (p - f64::from(u8::from(k == y))) * inv;
        }
        let d = eps_hat[i] - targets.continuous[i];
        mse += d * d;
        ge[i] = 2.0 * d * inv;
    }
    Ok((ce * inv, mse * inv, gl, ge))
}

/// One forward pass with both task losses and their separate gradients.
pub struct LossOutput {
    pub loss_discrete: f64,
    pub loss_continuous: f64,
    pub pass: ForwardPass,
    pub grad_logits: Array2<f64>,
    pub grad_eps: Array1<f64>,
}

impl LossOutput {
    /// Parameter gradients of `wd * loss_discrete + wc * loss_continuous`.
    pub fn gradients(&self, wd: f64, wc: f64) -> Result<Vec<Array2<f64>>> {
        self.pass.backward(&(&self.grad_logits * wd), &(&self.grad_eps * wc))
    }
}

/// Builds the noisy batch for the chosen mode and evaluates both losses.
/// Diffusion modes draw one timestep per graph uniformly from `1..=T`.
pub fn compute_losses(
    model: &GnnModel,
    examples: &[Example],
    sched: &DiffusionSchedule,
    mode: TaskMode,
    rng: &mut impl Rng,
) -> Result<LossOutput> {
    if examples.is_empty() {
        return Err(GdsgError::Shape("empty batch".into()));
    }
    let insts: Vec<&OffloadInstance> = examples.iter().map(|e| e.instance).collect();
    let batch = BatchedGraph::from_instances(&insts, SlotLayout::Dense);
    let (input, targets) = noisy_batch(&batch, examples, sched, mode, rng)?;
    let pass = model.forward(&batch, &input)?;
    let (ld, lc, gl, ge) = masked_losses(pass.logits(), &pass.eps(), &targets, &batch.mask)?;
    Ok(LossOutput {
        loss_discrete: ld,
        loss_continuous: lc,
        pass,
        grad_logits: gl,
        grad_eps: ge,
    })
}

/// Network input and head targets for one batch.
pub fn noisy_batch(
    batch: &BatchedGraph,
    examples: &[Example],
    sched: &DiffusionSchedule,
    mode: TaskMode,
    rng: &mut impl Rng,
) -> Result<(NoisyInput, Targets)> {
    let e = batch.num_edges();
    let mut y0_d = vec![0u8; e];
    let mut y0_c = vec![0.0; e];
    for (slots, ex) in batch.slots.iter().zip(examples) {
        if ex.label.decisions.len() != ex.instance.num_edges() {
            return Err(GdsgError::LengthMismatch {
                expected: ex.instance.num_edges(),
                decisions: ex.label.decisions.len(),
                allocations: ex.label.allocations.len(),
            });
        }
        for (i, &slot) in slots.iter().enumerate() {
            y0_d[slot] = u8::from(ex.label.decisions[i]);
            y0_c[slot] = alloc_to_signal(ex.label.allocations[i]);
        }
    }
    if mode == TaskMode::Discriminative {
        let input = NoisyInput::blank(e, batch.num_graphs);
        return Ok((
            input,
            Targets {
                discrete: y0_d,
                continuous: y0_c,
            },
        ));
    }
    let t: Vec<usize> = (0..batch.num_graphs)
        .map(|_| rng.random_range(1..=sched.steps()))
        .collect();
    let mut yt_d = vec![0u8; e];
    let mut yt_c = vec![0.0; e];
    let mut eps = vec![0.0; e];
    for (g, &tg) in t.iter().enumerate() {
        let slots: Vec<usize> = (0..e).filter(|&i| batch.edge_graph[i] == g).collect();
        let d: Vec<u8> = slots.iter().map(|&i| y0_d[i]).collect();
        let c: Vec<f64> = slots.iter().map(|&i| y0_c[i]).collect();
        let noisy_d = discrete_noise_to_t(&d, tg, sched, rng)?;
        let (noisy_c, noise) = continuous_noise_to_t(&c, tg, sched, rng)?;
        for (k, &i) in slots.iter().enumerate() {
            yt_d[i] = noisy_d[k];
            yt_c[i] = noisy_c[k];
            eps[i] = noise[k];
        }
    }
    Ok((
        NoisyInput::new(&yt_d, &yt_c, t),
        Targets {
            discrete: y0_d,
            continuous: eps,
        },
    ))
}

/// First-order adaptive-moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

pub fn grad_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

pub const ORTHO_THRESHOLDS: [f64; 3] = [0.05, 0.1, 0.15];

/// Cosines between the two task gradients at one training step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoEntry {
    pub step: usize,
    /// `None` when either gradient of the block is zero.
    pub cosines: Vec<Option<f64>>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrthoReport {
    pub blocks: Vec<String>,
    pub entries: Vec<OrthoEntry>,
}

impl OrthoReport {
    /// Share of defined block cosines with `|cos| < threshold`, pooled over
    /// all probed steps.
    pub fn proportion_below(&self, threshold: f64) -> f64 {
        let (hit, total) = self
            .entries
            .iter()
            .flat_map(|e| e.cosines.iter().flatten())
            .fold((0usize, 0usize), |(h, t), c| (h + usize::from(c.abs() < threshold), t + 1));
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    pub fn undefined_count(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| &e.cosines)
            .filter(|c| c.is_none())
            .count()
    }

    /// Long format: one row per step and block, plus an `overall` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut rows = vec![];
        for e in &self.entries {
            for (b, c) in self.blocks.iter().zip(&e.cosines) {
                rows.push((e.step, b.as_str(), *c));
            }
            rows.push((e.step, "overall", e.overall));
        }
        w.write_record(["step", "block", "cosine", "abs_below_0.05", "abs_below_0.1", "abs_below_0.15"])
            .map_err(|e| csv_err(path, e))?;
        for (step, block, c) in rows {
            let flags = ORTHO_THRESHOLDS.map(|th| c.map_or(String::new(), |c| u8::from(c.abs() < th).to_string()));
            let cos = c.map_or("undefined".into(), |c| c.to_string());
            w.write_record([step.to_string(), block.into(), cos, flags[0].clone(), flags[1].clone(), flags[2].clone()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| GdsgError::io(path, e))
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> GdsgError {
    GdsgError::io(path, std::io::Error::other(e.to_string()))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Per-block and pooled cosines between two gradient sets.
pub fn gradient_cosines(ga: &[Array2<f64>], gb: &[Array2<f64>], blocks: &[usize]) -> (Vec<Option<f64>>, Option<f64>) {
    let flat = |g: &Array2<f64>| g.iter().copied().collect::<Vec<f64>>();
    let per: Vec<Option<f64>> = blocks.iter().map(|&i| cosine(&flat(&ga[i]), &flat(&gb[i]))).collect();
    let all_a: Vec<f64> = blocks.iter().flat_map(|&i| flat(&ga[i])).collect();
    let all_b: Vec<f64> = blocks.iter().flat_map(|&i| flat(&gb[i])).collect();
    (per, cosine(&all_a, &all_b))
}

/// Two backward passes, one per task loss, over the tracked blocks.
pub fn probe_orthogonality(model: &GnnModel, losses: &LossOutput, step: usize) -> Result<OrthoEntry> {
    let gd = losses.gradients(1.0, 0.0)?;
    let gc = losses.gradients(0.0, 1.0)?;
    let (cosines, overall) = gradient_cosines(&gd, &gc, &model.tracked_blocks());
    Ok(OrthoEntry { step, cosines, overall })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_discrete: f64,
    pub train_continuous: f64,
    pub val_discrete: Option<f64>,
    pub val_continuous: Option<f64>,
    pub lr: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| GdsgError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss (last epoch without a
    /// validation split).
    pub model: GnnModel,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub ortho: OrthoReport,
    pub steps: usize,
}

fn task_weights(cfg: &TrainConfig) -> (f64, f64) {
    match cfg.task {
        TaskMode::DiscreteOnly => (cfg.discrete_weight, 0.0),
        TaskMode::ContinuousOnly => (0.0, cfg.continuous_weight),
        TaskMode::Multi | TaskMode::Discriminative => (cfg.discrete_weight, cfg.continuous_weight),
    }
}

/// Splits indices into (train, validation) with a seed-fixed shuffle.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    let n_val = if n >= 2 { ((n as f64 * fraction).round() as usize).min(n - 1) } else { 0 };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Optimizes the weighted task losses with Adam and cosine decay.
pub fn train(model: GnnModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(GdsgError::Config("training set is empty".into()));
    }
    let sched = cfg.schedule.build()?;
    let mut model = model;
    let (train_idx, val_idx) = split_indices(examples.len(), cfg.validation_fraction, cfg.seed);
    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = batches_per_epoch * cfg.epochs;
    let (wd, wc) = task_weights(cfg);
    let mut opt = Adam::new(&model.param_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut ortho = OrthoReport {
        blocks: model.tracked_blocks().iter().map(|&i| model.names()[i].clone()).collect(),
        entries: Vec::new(),
    };
    let mut best: Option<(f64, usize, GnnModel)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_c, mut count) = (0.0, 0.0, 0usize);
        let mut lr = cfg.lr;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
            let out = compute_losses(&model, &batch, &sched, cfg.task, &mut rng)?;
            lr = cfg.lr_at(step, total);
            let grads = out.gradients(wd, wc)?;
            let loss = wd * out.loss_discrete + wc * out.loss_continuous;
            let norm = grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(GdsgError::NonFiniteLoss { step, lr, grad_norm: norm });
            }
            if cfg.probe_every > 0 && step % cfg.probe_every == 0 {
                ortho.entries.push(probe_orthogonality(&model, &out, step)?);
            }
            opt.step(model.params_mut(), &grads, lr);
            sum_d += out.loss_discrete * chunk.len() as f64;
            sum_c += out.loss_continuous * chunk.len() as f64;
            count += chunk.len();
            step += 1;
        }
        let (val_d, val_c) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (d, c) = evaluate_losses(&model, examples, &val_idx, &sched, cfg)?;
            (Some(d), Some(c))
        };
        let score = match (val_d, val_c) {
            (Some(d), Some(c)) => wd * d + wc * c,
            _ => f64::NEG_INFINITY,
        };
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, epoch, model.clone()));
        }
        metrics.push(EpochMetrics {
            epoch,
            train_discrete: sum_d / count as f64,
            train_continuous: sum_c / count as f64,
            val_discrete: val_d,
            val_continuous: val_c,
            lr,
        });
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        metrics,
        ortho,
        steps: step,
    })
}

/// Validation losses with a fixed noise stream so epochs are comparable.
fn evaluate_losses(
    model: &GnnModel,
    examples: &[Example],
    idx: &[usize],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7a11d));
    let (mut d, mut c) = (0.0, 0.0);
    for chunk in idx.chunks(cfg.batch_size) {
        let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
        let out = compute_losses(model, &batch, sched, cfg.task, &mut rng)?;
        d += out.loss_discrete * chunk.len() as f64;
        c += out.loss_continuous * chunk.len() as f64;
    }
    Ok((d / idx.len() as f64, c / idx.len() as f64))
}

/// Trains the same architecture without diffusion.
pub fn train_discriminative(model: GnnModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        task: TaskMode::Discriminative,
        ..cfg.clone()
    };
    train(model, examples, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn targets(d: Vec<u8>, c: Vec<f64>) -> Targets {
        Targets {
            discrete: d,
            continuous: c,
        }
    }

    #[test]
    fn point_mass_outputs_have_zero_loss() {
        let logits = array![[-1e3, 1e3], [1e3, -1e3]];
        let t = targets(vec![1, 0], vec![0.3, -0.2]);
        let (ld, lc, _, _) = masked_losses(&logits, &array![0.3, -0.2], &t, &array![1.0, 1.0]).unwrap();
        assert_eq!(ld, 0.0);
        assert_eq!(lc, 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let logits = Array2::zeros((3, 2));
        let t = targets(vec![1, 0, 1], vec![0.0; 3]);
        let (ld, _, _, _) = masked_losses(&logits, &Array1::zeros(3), &t, &array![1.0, 1.0, 1.0]).unwrap();
        assert!((ld - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn padding_labels_are_ignored() {
        let logits = array![[0.2, -0.4], [1.5, 0.3], [0.0, 0.9]];
        let eps = array![0.1, -0.5, 2.0];
        let mask = array![1.0, 0.0, 1.0];
        let a = masked_losses(&logits, &eps, &targets(vec![1, 0, 0], vec![0.0, 0.0, 1.0]), &mask).unwrap();
        let b = masked_losses(&logits, &eps, &targets(vec![1, 1, 0], vec![0.0, 9.0, 1.0]), &mask).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.row(1).sum(), 0.0);
    }

    #[test]
    fn all_padding_is_an_error() {
        let r = masked_losses(&Array2::zeros((1, 2)), &Array1::zeros(1), &targets(vec![0], vec![0.0]), &array![0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn cosine_properties() {
        let g1 = vec![array![[1.0, 2.0]], array![[0.0, 0.0]], array![[3.0, -1.0]]];
        let g2 = vec![array![[2.0, 4.0]], array![[1.0, 0.0]], array![[1.0, 3.0]]];
        let (same, overall) = gradient_cosines(&g1, &g1, &[0, 2]);
        assert!(same.iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-12));
        assert!((overall.unwrap() - 1.0).abs() < 1e-12);
        let (c, _) = gradient_cosines(&g1, &g2, &[0, 1, 2]);
        assert!((c[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c[1], None);
        assert!(c[2].unwrap().abs() < 1e-12);
        let scaled: Vec<_> = g2.iter().map(|g| g * 7.5).collect();
        let (cs, _) = gradient_cosines(&g1, &scaled, &[0, 1, 2]);
        for (a, b) in c.iter().zip(&cs) {
            assert_eq!(a.map(|v| (v * 1e9).round()), b.map(|v| (v * 1e9).round()));
        }
        let (swapped, _) = gradient_cosines(&g2, &g1, &[0, 1, 2]);
        assert_eq!(swapped, c);
    }

    #[test]
    fn report_proportions_skip_undefined() {
        let report = OrthoReport {
            blocks: vec!["a".into(), "b".into()],
            entries: vec![
                OrthoEntry { step: 0, cosines: vec![Some(0.01), None], overall: Some(0.01) },
                OrthoEntry { step: 1, cosines: vec![Some(0.12), Some(-0.9)], overall: None },
            ],
        };
        assert!((report.proportion_below(0.05) - 1.0 / 3.0).abs() < 1e-15);
        assert!((report.proportion_below(0.15) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.undefined_count(), 1);
    }

    #[test]
    fn adam_ignores_zero_gradients() {
        let mut params = vec![array![[0.5, -1.0]]];
        let before = params.clone();
        let mut opt = Adam::new(&[(1, 2)]);
        opt.step(&mut params, &[Array2::zeros((1, 2))], 0.1);
        assert_eq!(params, before);
        opt.step(&mut params, &[array![[1.0, 1.0]]], 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0, 100), 2e-4);
        assert!((cfg.lr_at(99, 100) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (a, b) = split_indices(100, 0.05, 3);
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|i| !a.contains(i)));
        assert_eq!(split_indices(100, 0.05, 3), (a, b));
    }
}
