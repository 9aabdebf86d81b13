//! Sampling with DDIM and DDPM and scoring samples against the data.

use o2mkd::diffusion::{sample, NoiseSchedule, SampleConfig, Sampler};
use o2mkd::ensemble::{train_teacher, TrainConfig};
use o2mkd::eval::{evaluate, mmd_rbf, ToyDataset, DEFAULT_BANDWIDTHS};
use o2mkd::rng::{stream, Stream};

fn main() -> o2mkd::Result<()> {
    let data = ToyDataset::gmm8();
    let a = data.sample(1000, &mut stream(1, Stream::Data));
    let b = data.sample(1000, &mut stream(2, Stream::Data));
    println!("MMD^2 between two data draws: {:.5}", mmd_rbf(a.view(), b.view(), &DEFAULT_BANDWIDTHS)?);

    let cfg = TrainConfig { iterations: 8000, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, _) = train_teacher(&cfg)?;
    let sched = NoiseSchedule::new(cfg.schedule, cfg.total_steps)?;
    for (sampler, steps) in [(Sampler::Ddim, 50), (Sampler::Ddim, 10), (Sampler::Ddpm, 1000)] {
        let out = sample(
            &teacher,
            &sched,
            &SampleConfig { sampler, n_steps: steps, n_samples: 1000, seed: 7, keep_trajectory: false },
        )?;
        let m = evaluate(out.samples.view(), &data, 1000, 3)?;
        println!("{sampler:?} {steps:>4} steps: MMD^2 {:.5}, modes {}/8", m.mmd, m.coverage.unwrap_or(0));
    }
    Ok(())
}
