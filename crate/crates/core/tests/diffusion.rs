use gdsg::diffusion::{
    continuous_denoise_step, continuous_noise_to_t, discrete_denoise_step, discrete_forward_step,
    discrete_noise_to_t, discrete_posterior, discrete_posterior_jump, inference_timesteps, make_schedule,
    predict_y0, DenoiseMode, DiffusionSchedule, ScheduleConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{bayes_posterior, cumulative, oracle_eps};

fn sched() -> DiffusionSchedule {
    ScheduleConfig::default().build().unwrap()
}

#[test]
fn terminal_discrete_marginal_is_uniform() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for bit in [0u8, 1] {
        let y = discrete_noise_to_t(&vec![bit; 100_000], s.steps(), &s, &mut rng).unwrap();
        let ones = y.iter().filter(|&&b| b == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() <= 0.02, "start {bit}: {ones}");
    }
}

#[test]
fn chapman_kolmogorov_marginals() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in [1, 7, 40, 120, 200] {
        for bit in [0u8, 1] {
            let y0 = vec![bit; 100_000];
            let direct = discrete_noise_to_t(&y0, t, &s, &mut rng).unwrap();
            let before = if t == 1 { y0.clone() } else { discrete_noise_to_t(&y0, t - 1, &s, &mut rng).unwrap() };
            let two_step = discrete_forward_step(&before, t, &s, &mut rng).unwrap();
            let frac = |v: &[u8]| v.iter().filter(|&&b| b == 1).count() as f64 / v.len() as f64;
            assert!((frac(&direct) - frac(&two_step)).abs() <= 0.01, "t={t}");
            assert!((frac(&direct) - cumulative(&s, 0, t)[bit as usize][1]).abs() <= 0.01);
        }
    }
}

#[test]
fn cumulative_matrices_match_products() {
    let s = sched();
    for t in 0..=s.steps() {
        let want = cumulative(&s, 0, t);
        let got = s.q_bar(t);
        for i in 0..2 {
            assert_eq!(got[i][0] + got[i][1], 1.0, "t={t}");
            for j in 0..2 {
                assert!((got[i][j] - want[i][j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn posterior_matches_brute_force_bayes() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let t = rng.random_range(1..=s.steps());
        let prev = rng.random_range(0..t);
        let p1: f64 = rng.random();
        let y_t = rng.random_range(0..2u8);
        let got = discrete_posterior_jump(&[y_t], &[[1.0 - p1, p1]], t, prev, &s).unwrap()[0];
        let want = bayes_posterior(&s, y_t, [1.0 - p1, p1], t, prev);
        for k in 0..2 {
            assert!((got[k] - want[k]).abs() <= 1e-12, "t={t} s={prev}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn continuous_marginal_moments() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 100_000;
    for (t, y0) in [(1, 0.8), (50, -0.4), (200, 0.0), (120, 1.0)] {
        let (y, _) = continuous_noise_to_t(&vec![y0; n], t, &s, &mut rng).unwrap();
        let ab = s.alpha_bar(t);
        let (mean_true, var_true) = (ab.sqrt() * y0, 1.0 - ab);
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (var_true / n as f64).sqrt();
        let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mean_true).abs() <= 3.0 * se_mean, "t={t}: mean {mean} vs {mean_true}");
        assert!((var - var_true).abs() <= 3.0 * se_var, "t={t}: var {var} vs {var_true}");
    }
}

#[test]
fn ddim_single_jump_with_oracle_recovers_signal() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let t = rng.random_range(1..=s.steps());
        let y0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (yt, _) = continuous_noise_to_t(&y0, t, &s, &mut rng).unwrap();
        let eps = oracle_eps(&yt, &y0, t, &s);
        let back = continuous_denoise_step(&yt, &eps, t, 0, &s, DenoiseMode::Ddim, &mut rng).unwrap();
        for (a, b) in back.iter().zip(&y0) {
            assert!((a - b).abs() <= 1e-9, "t={t}");
        }
    }
}

#[test]
fn oracle_chains_reconstruct_the_signal() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let y0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bits: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
    for mode in [DenoiseMode::Ddim, DenoiseMode::Ancestral] {
        let mut yc: Vec<f64> = (0..16).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let mut yd: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
        let grid: Vec<usize> = (0..=s.steps()).rev().collect();
        for w in grid.windows(2) {
            let (t, prev) = (w[0], w[1]);
            let eps = oracle_eps(&yc, &y0, t, &s);
            yc = continuous_denoise_step(&yc, &eps, t, prev, &s, mode, &mut rng).unwrap();
            let p: Vec<[f64; 2]> = bits.iter().map(|&b| if b == 1 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
            yd = discrete_denoise_step(&yd, &p, t, prev, &s, mode, &mut rng).unwrap();
        }
        for (a, b) in yc.iter().zip(&y0) {
            assert!((a - b).abs() <= 1e-6, "{mode:?}");
        }
        assert_eq!(yd, bits, "{mode:?}");
    }
}

#[test]
fn reconstruction_inverts_forward_noise() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let y0 = vec![0.3, -0.9, 0.55];
    for t in [1, 100, 200] {
        let (yt, eps) = continuous_noise_to_t(&y0, t, &s, &mut rng).unwrap();
        for (a, b) in predict_y0(&yt, &eps, t, &s).iter().zip(&y0) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn single_step_schedule_is_accepted() {
    let s = DiffusionSchedule::from_betas(vec![0.999]).unwrap();
    assert_eq!(s.steps(), 1);
    assert!(make_schedule(200, 1e-4, 0.05).is_err());
    assert_eq!(inference_timesteps(1, 5), vec![1, 0]);
}

proptest! {
    #[test]
    fn cumulative_rows_sum_to_one_exactly(betas in proptest::collection::vec(0.0f64..0.999, 1..300)) {
        let s = DiffusionSchedule::from_betas(betas).unwrap();
        for t in 0..=s.steps() {
            for row in s.q_bar(t) {
                prop_assert_eq!(row[0] + row[1], 1.0);
            }
        }
    }

    #[test]
    fn posterior_is_normalized(t in 1usize..=200, y in 0u8..2, p in 0.0f64..=1.0) {
        let s = sched();
        let post = discrete_posterior(&[y], &[[1.0 - p, p]], t, &s).unwrap()[0];
        prop_assert!((post[0] + post[1] - 1.0).abs() <= 1e-12);
        prop_assert!(post.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ddim_grid_is_strictly_decreasing(total in 1usize..500, steps in 1usize..60) {
        let g = inference_timesteps(total, steps);
        prop_assert_eq!(g[0], total);
        prop_assert_eq!(*g.last().unwrap(), 0);
        prop_assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}
