//! Forward corruption of both channels and the closed-form reverse steps.

use gdsg::diffusion::{
    continuous_noise_to_t, discrete_noise_to_t, discrete_posterior, inference_timesteps, predict_y0,
    ScheduleConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let sched = ScheduleConfig::default().build()?;
    let t_max = sched.steps();
    for t in [1, 10, 50, 100, t_max] {
        let qb = sched.q_bar(t);
        println!("t={t:<3} alpha_bar={:.3e} P(1 -> 1)={:.4}", sched.alpha_bar(t), qb[1][1]);
    }
    println!("5-step grid: {:?}", inference_timesteps(t_max, 5));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y0 = vec![1u8; 10_000];
    let yt = discrete_noise_to_t(&y0, 20, &sched, &mut rng)?;
    let ones = yt.iter().filter(|&&b| b == 1).count() as f64 / y0.len() as f64;
    println!("after 20 steps {ones:.3} of bits remain 1 (expected {:.3})", sched.q_bar(20)[1][1]);

    // One step back the chain mostly keeps its current state, even when the
    // clean bit is predicted to differ.
    let post = discrete_posterior(&[0], &[[0.05, 0.95]], 20, &sched)?;
    println!("posterior at t=19 given y_20=0 and p(y0=1)=0.95: {:?}", post[0]);

    let (yc, eps) = continuous_noise_to_t(&[0.6], 150, &sched, &mut rng)?;
    let back = predict_y0(&yc, &eps, 150, &sched);
    println!("continuous y0=0.6 -> y_150={:.4} -> reconstructed {:.6}", yc[0], back[0]);
    Ok(())
}
