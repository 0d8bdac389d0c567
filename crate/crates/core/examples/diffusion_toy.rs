//! Trains the bare denoiser on a two-cluster toy distribution whose cluster
//! is chosen by a one-dimensional context, then samples both.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use legimod::diffusion::{sample_seeded, train, NoiseSchedule, TrainConfig};

fn main() -> legimod::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 512;
    let mut data = Array2::zeros((n, 2));
    let mut ctx = Array2::zeros((n, 1));
    for i in 0..n {
        let c = if i % 2 == 0 { -1.0 } else { 1.0 };
        ctx[[i, 0]] = c;
        data[[i, 0]] = 0.5 * c + 0.05 * rng.gen_range(-1.0..1.0);
        data[[i, 1]] = -0.3 * c + 0.05 * rng.gen_range(-1.0..1.0);
    }
    let schedule = NoiseSchedule::default();
    let config = TrainConfig {
        steps: 3000,
        hidden: 64,
        blocks: 2,
        ..TrainConfig::default()
    };
    let out = train(data.view(), ctx.view(), &schedule, &config)?;
    let tail = &out.losses[out.losses.len() - 100..];
    println!("mean loss over the last 100 steps {:.4}", tail.iter().sum::<f64>() / 100.0);

    for c in [-1.0, 1.0] {
        let contexts = Array2::from_elem((200, 1), c);
        let seeds: Vec<u64> = (0..200).collect();
        let s = sample_seeded(&out.net, contexts.view(), &schedule, &seeds)?;
        let mean = s.mean_axis(ndarray::Axis(0)).unwrap();
        println!(
            "context {c:+}: sample mean ({:.3}, {:.3}), expected ({:.3}, {:.3})",
            mean[0],
            mean[1],
            0.5 * c,
            -0.3 * c
        );
    }
    Ok(())
}
