//! Noising processes, posteriors and denoising updates for the two solution
//! channels, independent of any network.
//!
//! Discrete states are stored as the index of the hot entry of the per-edge
//! one-hot pair (`0` = local, `1` = offload). Continuous states live in the
//! rescaled space `[-1, 1]` (see [`alloc_to_signal`]).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GdsgError, Result};

pub type Mat2 = [[f64; 2]; 2];

const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// Terminal noise level required by [`make_schedule`].
pub const TERMINAL_ALPHA_BAR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    /// `betas[t - 1]` is the corruption ratio of step `t`.
    betas: Vec<f64>,
    /// `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
    /// Cumulative transition matrices, `q_bar[0]` is the identity.
    q_bar: Vec<Mat2>,
}

/// Parameters of the linear beta schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_min: 1e-4,
            beta_max: 0.1,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// Linear beta schedule. Fails if the chain does not reach the terminal noise
/// level, since sampling starts from pure noise.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(GdsgError::Config("diffusion needs at least one step".into()));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(GdsgError::Config(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let sched = DiffusionSchedule::from_betas(betas)?;
    let terminal = sched.alpha_bar(steps);
    if terminal > TERMINAL_ALPHA_BAR {
        return Err(GdsgError::Config(format!(
            "alpha_bar_T = {terminal:.3e} exceeds {TERMINAL_ALPHA_BAR:e}; increase beta_max or T"
        )));
    }
    Ok(sched)
}

impl DiffusionSchedule {
    /// Builds a schedule from explicit betas without the terminal-noise check.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(GdsgError::Config("empty beta schedule".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(GdsgError::Config(format!("beta {b} outside [0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        let mut q_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        q_bar.push(IDENTITY);
        for (i, &b) in betas.iter().enumerate() {
            alpha_bar.push(alpha_bar[i] * (1.0 - b));
            q_bar.push(flip_matrix(compose_flips(q_bar[i][0][1], b)));
        }
        Ok(Self {
            betas,
            alpha_bar,
            q_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Single-step transition matrix Q_t.
    pub fn q(&self, t: usize) -> Mat2 {
        step_matrix(self.beta(t))
    }

    /// Cumulative product Q_1 ... Q_t.
    pub fn q_bar(&self, t: usize) -> Mat2 {
        self.q_bar[t]
    }

    /// Product Q_{s+1} ... Q_t, the transition from step `s` to step `t`.
    pub fn transition(&self, s: usize, t: usize) -> Mat2 {
        flip_matrix(((s + 1)..=t).fold(0.0, |f, k| compose_flips(f, self.beta(k))))
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(GdsgError::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    fn check_jump(&self, t: usize, s: usize) -> Result<()> {
        self.check_t(t)?;
        if s >= t {
            return Err(GdsgError::Domain(format!(
                "target step {s} must precede step {t}"
            )));
        }
        Ok(())
    }
}

fn step_matrix(beta: f64) -> Mat2 {
    flip_matrix(beta)
}

/// Symmetric kernel with flip probability `f`. Each row sums to exactly one
/// in floating point: `1 - f` is either exact or off by at most a quarter
/// ulp of one, which the final addition rounds away.
fn flip_matrix(f: f64) -> Mat2 {
    [[1.0 - f, f], [f, 1.0 - f]]
}

/// Flip probability of two symmetric kernels applied in sequence; this is
/// the off-diagonal entry of their matrix product.
fn compose_flips(f: f64, g: f64) -> f64 {
    f * (1.0 - g) + (1.0 - f) * g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMode {
    /// Stochastic posterior sampling, one step at a time.
    Ancestral,
    /// Deterministic continuous update with step skipping; the discrete
    /// channel jumps through the skipped posterior.
    Ddim,
}

/// Descending list of time steps visited at inference, `steps` of them spaced
/// uniformly over `[1, T]`, followed by the final target `0`.
pub fn inference_timesteps(total: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, total);
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| {
            let v = (total as f64 * (steps - i) as f64 / steps as f64).round() as usize;
            v.clamp(1, total)
        })
        .collect();
    ts.dedup();
    ts.push(0);
    ts
}

/// Maps an allocation in `[0, 1]` onto the diffusion signal range `[-1, 1]`.
pub fn alloc_to_signal(a: f64) -> f64 {
    2.0 * a - 1.0
}

pub fn signal_to_alloc(y: f64) -> f64 {
    (y + 1.0) / 2.0
}

// ----- discrete channel -----

fn sample_state(p_one: f64, rng: &mut impl Rng) -> u8 {
    u8::from(rng.random::<f64>() < p_one)
}

/// Samples `y_t ~ Cat(y0 Q̄_t)` independently per edge.
pub fn discrete_noise_to_t(
    y0: &[u8],
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    sched.check_t(t)?;
    let qb = sched.q_bar(t);
    Ok(y0
        .iter()
        .map(|&k| sample_state(qb[k as usize][1], rng))
        .collect())
}

/// One forward step `y_{t-1} -> y_t` with Q_t.
pub fn discrete_forward_step(
    y_prev: &[u8],
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    sched.check_t(t)?;
    let q = sched.q(t);
    Ok(y_prev
        .iter()
        .map(|&k| sample_state(q[k as usize][1], rng))
        .collect())
}

/// `q(y_{t-1} | y_t, ỹ0)` averaged over `ỹ0 ~ y0_hat`.
pub fn discrete_posterior(
    y_t: &[u8],
    y0_hat: &[[f64; 2]],
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<Vec<[f64; 2]>> {
    discrete_posterior_jump(y_t, y0_hat, t, t - 1, sched)
}

/// Posterior over `y_s` for any `s < t`:
/// `q(y_s | y_t, x0) = q(y_t | y_s) q(y_s | x0) / q(y_t | x0)`, mixed over
/// `x0 ~ y0_hat` with equal weighting of the normalized posteriors. Terms with
/// zero likelihood `q(y_t | x0)` are dropped; if none remain the state is kept.
pub fn discrete_posterior_jump(
    y_t: &[u8],
    y0_hat: &[[f64; 2]],
    t: usize,
    s: usize,
    sched: &DiffusionSchedule,
) -> Result<Vec<[f64; 2]>> {
    sched.check_jump(t, s)?;
    if y_t.len() != y0_hat.len() {
        return Err(GdsgError::Shape(format!(
            "{} states vs {} predicted distributions",
            y_t.len(),
            y0_hat.len()
        )));
    }
    let trans = sched.transition(s, t);
    let qb_s = sched.q_bar(s);
    let qb_t = sched.q_bar(t);
    y_t.iter()
        .zip(y0_hat)
        .enumerate()
        .map(|(i, (&yt, p))| {
            if p.iter().any(|v| *v < 0.0) || ((p[0] + p[1]) - 1.0).abs() > 1e-6 {
                return Err(GdsgError::Domain(format!(
                    "edge {i}: predicted distribution {p:?} is not normalized"
                )));
            }
            let yt = yt as usize;
            let mut out = [0.0; 2];
            let mut weight = 0.0;
            for (x0, &w) in p.iter().enumerate() {
                let like = qb_t[x0][yt];
                if w == 0.0 || like == 0.0 {
                    continue;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    *o += w * trans[k][yt] * qb_s[x0][k] / like;
                }
                weight += w;
            }
            if weight == 0.0 {
                let mut keep = [0.0; 2];
                keep[yt] = 1.0;
                return Ok(keep);
            }
            let z = out[0] + out[1];
            Ok([out[0] / z, out[1] / z])
        })
        .collect()
}

/// Samples `y_s` from the posterior jump `t -> s`. Ancestral mode uses
/// `s = t - 1` regardless of the requested target.
pub fn discrete_denoise_step(
    y_t: &[u8],
    y0_hat: &[[f64; 2]],
    t: usize,
    s: usize,
    sched: &DiffusionSchedule,
    mode: DenoiseMode,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    let s = match mode {
        DenoiseMode::Ancestral => t.saturating_sub(1),
        DenoiseMode::Ddim => s,
    };
    let post = discrete_posterior_jump(y_t, y0_hat, t, s, sched)?;
    Ok(post.iter().map(|p| sample_state(p[1], rng)).collect())
}

// ----- continuous channel -----

/// `y_t = sqrt(ᾱ_t) y0 + sqrt(1 - ᾱ_t) ε` with fresh standard normal `ε`.
pub fn continuous_noise_to_t(
    y0: &[f64],
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let eps: Vec<f64> = y0.iter().map(|_| rng.sample(StandardNormal)).collect();
    let yt = y0
        .iter()
        .zip(&eps)
        .map(|(y, e)| ab.sqrt() * y + (1.0 - ab).sqrt() * e)
        .collect();
    Ok((yt, eps))
}

/// Reconstruction `ŷ0 = (y_t - sqrt(1 - ᾱ_t) ε̂) / sqrt(ᾱ_t)`.
pub fn predict_y0(y_t: &[f64], eps_hat: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    y_t.iter()
        .zip(eps_hat)
        .map(|(y, e)| (y - (1.0 - ab).sqrt() * e) / ab.sqrt())
        .collect()
}

/// Moves `y_t` to step `s < t`.
///
/// Ancestral mode samples the Gaussian posterior `q(y_s | y_t, ŷ0)` (with
/// `s = t - 1` in the usual chain); DDIM mode applies the deterministic update
/// `y_s = sqrt(ᾱ_s) ŷ0 + sqrt(1 - ᾱ_s) ε̂`.
pub fn continuous_denoise_step(
    y_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    s: usize,
    sched: &DiffusionSchedule,
    mode: DenoiseMode,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let s = match mode {
        DenoiseMode::Ancestral => t.saturating_sub(1),
        DenoiseMode::Ddim => s,
    };
    sched.check_jump(t, s)?;
    if y_t.len() != eps_hat.len() {
        return Err(GdsgError::Shape(format!(
            "{} states vs {} noise predictions",
            y_t.len(),
            eps_hat.len()
        )));
    }
    let y0 = predict_y0(y_t, eps_hat, t, sched);
    let (ab_t, ab_s) = (sched.alpha_bar(t), sched.alpha_bar(s));
    Ok(match mode {
        DenoiseMode::Ddim => y0
            .iter()
            .zip(eps_hat)
            .map(|(x0, e)| ab_s.sqrt() * x0 + (1.0 - ab_s).sqrt() * e)
            .collect(),
        DenoiseMode::Ancestral => {
            let a_ts = ab_t / ab_s;
            let b_ts = 1.0 - a_ts;
            let c0 = ab_s.sqrt() * b_ts / (1.0 - ab_t);
            let ct = a_ts.sqrt() * (1.0 - ab_s) / (1.0 - ab_t);
            let var = (1.0 - ab_s) / (1.0 - ab_t) * b_ts;
            y0.iter()
                .zip(y_t)
                .map(|(x0, yt)| {
                    let mean = c0 * x0 + ct * yt;
                    if var > 0.0 {
                        mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        mean
                    }
                })
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_schedule() -> DiffusionSchedule {
        make_schedule(200, 1e-4, 0.1).unwrap()
    }

    #[test]
    fn linear_schedule_terminal_noise() {
        // prod(1 - beta) for the linear [1e-4, 0.05] schedule, computed term by term
        let prod: f64 = (0..200)
            .map(|i| 1.0 - (1e-4 + (0.05 - 1e-4) * i as f64 / 199.0))
            .product();
        assert!(prod > 6e-3 && prod < 6.2e-3, "{prod}");
        assert!(make_schedule(200, 1e-4, 0.05).is_err());
        let s = default_schedule();
        assert!(s.alpha_bar(200) <= TERMINAL_ALPHA_BAR);
        let single = DiffusionSchedule::from_betas(vec![0.999]).unwrap();
        assert!((single.alpha_bar(1) - 0.001).abs() < 1e-15);
        assert!(make_schedule(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn q_bar_rows_are_stochastic() {
        let s = default_schedule();
        for t in 0..=s.steps() {
            for row in s.q_bar(t) {
                assert_eq!(row[0] + row[1], 1.0);
            }
        }
        let q = s.q(5);
        assert_eq!(q[0][0] + q[0][1], 1.0);
        assert_eq!(q[0][1], q[1][0]);
    }

    #[test]
    fn q_bar_marginal_is_matrix_product() {
        let s = DiffusionSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        // [[0.9,0.1],[0.1,0.9]] x [[0.8,0.2],[0.2,0.8]]
        assert!((s.q_bar(2)[0][0] - (0.72 + 0.02)).abs() < 1e-15);
        assert_eq!(s.transition(0, 2), s.q_bar(2));
    }

    #[test]
    fn zero_beta_is_identity() {
        let s = DiffusionSchedule::from_betas(vec![0.0; 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y0 = vec![0, 1, 1, 0, 1];
        assert_eq!(discrete_noise_to_t(&y0, 10, &s, &mut rng).unwrap(), y0);
        let hat: Vec<[f64; 2]> = y0.iter().map(|&k| if k == 1 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
        let mut y = y0.clone();
        for t in (1..=10).rev() {
            y = discrete_denoise_step(&y, &hat, t, t - 1, &s, DenoiseMode::Ancestral, &mut rng)
                .unwrap();
            assert_eq!(y, y0);
        }
    }

    #[test]
    fn step_range_is_checked() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            discrete_noise_to_t(&[0], 0, &s, &mut rng),
            Err(GdsgError::StepOutOfRange { .. })
        ));
        assert!(continuous_noise_to_t(&[0.0], 201, &s, &mut rng).is_err());
        assert!(continuous_denoise_step(&[0.0], &[0.0], 0, 0, &s, DenoiseMode::Ddim, &mut rng).is_err());
    }

    #[test]
    fn posterior_rejects_unnormalized_prediction() {
        let s = default_schedule();
        assert!(discrete_posterior(&[0], &[[0.5, 0.6]], 3, &s).is_err());
    }

    #[test]
    fn posterior_concentrates_on_clean_chain() {
        let s = DiffusionSchedule::from_betas(vec![1e-12; 3]).unwrap();
        let p = discrete_posterior(&[1], &[[0.0, 1.0]], 1, &s).unwrap();
        assert!(p[0][1] > 1.0 - 1e-9);
    }

    #[test]
    fn posterior_symmetric_under_uniform_prediction() {
        let s = default_schedule();
        for t in [2, 50, 200] {
            let p0 = discrete_posterior(&[0], &[[0.5, 0.5]], t, &s).unwrap()[0];
            let p1 = discrete_posterior(&[1], &[[0.5, 0.5]], t, &s).unwrap()[0];
            assert!((p0[0] - p1[1]).abs() < 1e-12);
            assert!((p0[1] - p1[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_jump_with_true_noise_is_exact() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y0 = vec![-1.0, 0.3, 0.9, -0.25];
        for t in [1, 17, 120, 200] {
            let (yt, eps) = continuous_noise_to_t(&y0, t, &s, &mut rng).unwrap();
            let back = continuous_denoise_step(&yt, &eps, t, 0, &s, DenoiseMode::Ddim, &mut rng)
                .unwrap();
            for (a, b) in back.iter().zip(&y0) {
                assert!((a - b).abs() <= 1e-9, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn final_ancestral_step_is_deterministic() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let yt = vec![0.2, -0.4];
        let eps = vec![0.1, 0.3];
        let step = continuous_denoise_step(&yt, &eps, 1, 0, &s, DenoiseMode::Ancestral, &mut rng)
            .unwrap();
        let y0 = predict_y0(&yt, &eps, 1, &s);
        for (a, b) in step.iter().zip(&y0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_grid() {
        assert_eq!(inference_timesteps(200, 5), vec![200, 160, 120, 80, 40, 0]);
        assert_eq!(inference_timesteps(3, 10), vec![3, 2, 1, 0]);
        assert_eq!(inference_timesteps(200, 1), vec![200, 0]);
    }
}
