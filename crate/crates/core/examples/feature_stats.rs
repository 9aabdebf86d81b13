//! How the range of the tapped hidden feature changes with the timestep.
//!
//! `cargo run --release --example feature_stats -- [iterations]`

use o2mkd::diffusion::NoiseSchedule;
use o2mkd::ensemble::{train_teacher, TrainConfig};
use o2mkd::eval::{feature_stats, ToyDataset};

fn main() -> o2mkd::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse().expect("iterations")).unwrap_or(8000);
    let cfg = TrainConfig { iterations, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, _) = train_teacher(&cfg)?;
    let sched = NoiseSchedule::new(cfg.schedule, cfg.total_steps)?;
    let grid: Vec<usize> = (0..10).map(|k| k * 100 + 99).collect();
    let rows = feature_stats(&teacher, &sched, &ToyDataset::new(cfg.dataset), &grid, 512, 0)?;
    println!("{:>5} {:>9} {:>9} {:>9} {:>9} {:>9}", "t", "min", "q25", "median", "q75", "max");
    for r in rows {
        println!("{:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", r.t, r.min, r.q25, r.median, r.q75, r.max);
    }
    Ok(())
}
