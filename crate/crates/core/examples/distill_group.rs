//! No distillation vs one-to-one KD vs a routed group of four students.
//!
//! `cargo run --release --example distill_group -- [iterations]`

use o2mkd::distill::KdMethod;
use o2mkd::ensemble::{evaluate_model, train_o2mkd, train_o2okd, train_teacher, StudentInit, TrainConfig};

fn main() -> o2mkd::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse().expect("iterations")).unwrap_or(3000);
    let base = TrainConfig { iterations, student_init: StudentInit::Pruned, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, _) = train_teacher(&TrainConfig { iterations: 8000, ..base.clone() })?;

    let no_kd = TrainConfig { lambda_kd: 0.0, kd_method: KdMethod::None, ..base.clone() };
    let (plain, _) = train_o2okd(&teacher, &no_kd)?;
    let (single, _) = train_o2okd(&teacher, &base)?;
    let (group, report) = train_o2mkd(&teacher, &base)?;

    println!("{:<10} {:>10} {:>8}", "model", "MMD^2", "modes");
    for (name, m) in [
        ("teacher", evaluate_model(&teacher, &base)?),
        ("no-kd", evaluate_model(&plain, &base)?),
        ("o2okd", evaluate_model(&single, &base)?),
        ("o2mkd", evaluate_model(&group, &base)?),
    ] {
        println!("{name:<10} {:>10.5} {:>8}", m.mmd, m.coverage.unwrap_or(0));
    }
    for (i, share) in report.branch_fractions.iter().enumerate() {
        let (lo, hi) = group.partition().range(i + 1)?;
        println!("student {} owns [{lo}, {hi}), in-range share {share:.3}", i + 1);
    }
    Ok(())
}
