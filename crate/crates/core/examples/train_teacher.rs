//! Train a teacher on the 8-mode mixture, score it, and save a checkpoint.
//!
//! `cargo run --release --example train_teacher -- [iterations] [out.o2mk]`

use std::path::PathBuf;

use o2mkd::ensemble::{evaluate_model, train_teacher, TrainConfig};
use o2mkd::harness::{save_checkpoint, CheckpointHeader};

fn main() -> o2mkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(8000);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("teacher.o2mk"));

    // A short EMA horizon so that short runs are not dominated by the init.
    let cfg = TrainConfig { iterations, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, report) = train_teacher(&cfg)?;
    let (loss, _) = report.smoothed_final_loss(1, 0.99).expect("at least one iteration");
    println!("{iterations} iterations in {:.1}s, smoothed final loss {loss:.4}", report.wall_clock_secs);

    let m = evaluate_model(&teacher, &cfg)?;
    println!(
        "MMD^2 {:.5}  sliced W2 {:.4}  modes {}/8  near-mode share {:.2}",
        m.mmd,
        m.swd,
        m.coverage.unwrap_or(0),
        m.quality_fraction.unwrap_or(0.0)
    );

    let header = CheckpointHeader {
        architecture: teacher.architecture().clone(),
        schedule: cfg.schedule,
        total_steps: cfg.total_steps,
        role: "teacher".into(),
        partition: None,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    save_checkpoint(&out, &teacher, &header)?;
    println!("saved {}", out.display());
    Ok(())
}
